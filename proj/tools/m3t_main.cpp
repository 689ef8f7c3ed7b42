#include <iostream>

int main() {
    std::cout << "m3t: subcommands land here\n";
    return 0;
}
