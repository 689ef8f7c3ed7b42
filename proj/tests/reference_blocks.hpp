#pragma once

// Plain scalar-loop reference implementations used as oracles. These
// deliberately avoid the library's tensor ops: raw nested vectors, one
// index at a time.

#include <cmath>
#include <vector>

namespace refimpl {

using Mat = std::vector<std::vector<double>>;

inline Mat make(size_t rows, size_t cols, double fill = 0.0) {
    return Mat(rows, std::vector<double>(cols, fill));
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out = make(a.size(), b[0].size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b[0].size(); ++j) {
            double acc = 0;
            for (size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
            out[i][j] = acc;
        }
    return out;
}

inline std::vector<double> softmax_row(const std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> out(x.size());
    double z = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

inline std::vector<double> layer_norm_row(const std::vector<double>& x,
                                          const std::vector<double>& gamma,
                                          const std::vector<double>& beta, double eps = 1e-5) {
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i)
        out[i] = (x[i] - mean) / std::sqrt(var + eps) * gamma[i] + beta[i];
    return out;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& gamma,
                      const std::vector<double>& beta) {
    Mat out = x;
    for (auto& row : out) row = layer_norm_row(row, gamma, beta);
    return out;
}

inline Mat relu(const Mat& x) {
    Mat out = x;
    for (auto& row : out)
        for (double& v : row) v = v > 0 ? v : 0;
    return out;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[0].size(); ++j) out[i][j] += b[i][j];
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat out = make(a[0].size(), a.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
    return out;
}

// scaled dot-product attention; blocked[i][j] true removes key j for query i
inline Mat attention(const Mat& q, const Mat& k, const Mat& v,
                     const std::vector<std::vector<bool>>& blocked = {}) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
    Mat out = make(q.size(), v[0].size());
    for (size_t i = 0; i < q.size(); ++i) {
        std::vector<double> scores(k.size());
        for (size_t j = 0; j < k.size(); ++j) {
            double acc = 0;
            for (size_t d = 0; d < q[0].size(); ++d) acc += q[i][d] * k[j][d];
            scores[j] = acc * inv;
            if (!blocked.empty() && blocked[i][j]) scores[j] = -1e9;
        }
        const auto w = softmax_row(scores);
        for (size_t j = 0; j < k.size(); ++j)
            for (size_t d = 0; d < v[0].size(); ++d) out[i][d] += w[j] * v[j][d];
    }
    return out;
}

// multi-head attention with per-head projections and output merge
struct MhaWeights {
    std::vector<Mat> wq, wk, wv;  // per head
    Mat wo;
};

inline Mat multi_head(const Mat& q_src, const Mat& kv_src, const MhaWeights& w,
                      const std::vector<std::vector<bool>>& blocked = {}) {
    Mat merged;
    for (size_t h = 0; h < w.wq.size(); ++h) {
        Mat head = attention(matmul(q_src, w.wq[h]), matmul(kv_src, w.wk[h]),
                             matmul(kv_src, w.wv[h]), blocked);
        if (merged.empty()) {
            merged = head;
        } else {
            for (size_t i = 0; i < merged.size(); ++i)
                merged[i].insert(merged[i].end(), head[i].begin(), head[i].end());
        }
    }
    return matmul(merged, w.wo);
}

}  // namespace refimpl
