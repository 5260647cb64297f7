// Independent brute-force oracles used by the tests. Everything here is
// plain scalar double code with no dependency on the graph/tape machinery it
// is checking.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace oracles {

// 4-d array helper: shape (a,b,c,d), row-major.
struct Arr4 {
  int d0, d1, d2, d3;
  std::vector<double> v;
  Arr4(int a, int b, int c, int d)
      : d0(a), d1(b), d2(c), d3(d), v(static_cast<std::size_t>(a) * b * c * d, 0.0) {}
  double& at(int a, int b, int c, int d) {
    return v[((static_cast<std::size_t>(a) * d1 + b) * d2 + c) * d3 + d];
  }
  double at(int a, int b, int c, int d) const {
    return v[((static_cast<std::size_t>(a) * d1 + b) * d2 + c) * d3 + d];
  }
};

// Nested-loop valid cross-correlation.
inline Arr4 naive_conv2d(const Arr4& x, const Arr4& k, const std::vector<double>& bias,
                         int stride) {
  int B = x.d0, C = x.d1, H = x.d2, W = x.d3;
  int O = k.d0, kh = k.d2, kw = k.d3;
  int OH = (H - kh) / stride + 1, OW = (W - kw) / stride + 1;
  Arr4 out(B, O, OH, OW);
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int dy = 0; dy < kh; ++dy)
              for (int dx = 0; dx < kw; ++dx)
                acc += x.at(b, c, oy * stride + dy, ox * stride + dx) * k.at(o, c, dy, dx);
          out.at(b, o, oy, ox) = acc;
        }
  return out;
}

// Row of -log softmax values, mean over rows; positive of row i at column
// targets[i].
inline double flat_cross_entropy(const std::vector<std::vector<double>>& logits,
                                 const std::vector<int>& targets) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    double denom = 0;
    for (double s : logits[i]) denom += std::exp(s);
    total += std::log(denom) - logits[i][static_cast<std::size_t>(targets[i])];
  }
  return total / static_cast<double>(logits.size());
}

// InfoNCE over a square score matrix with positives on the diagonal.
inline double flat_infonce(const std::vector<std::vector<double>>& scores) {
  std::vector<int> diag(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) diag[i] = static_cast<int>(i);
  return flat_cross_entropy(scores, diag);
}

inline double softplus(double x) { return x > 30 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Binary discrimination loss over a square score matrix, positives on the
// diagonal: mean softplus(-pos) + mean softplus(neg).
inline double flat_binary_contrast(const std::vector<std::vector<double>>& scores) {
  std::size_t B = scores.size();
  double pos = 0, neg = 0;
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < B; ++j) {
      if (i == j)
        pos += softplus(-scores[i][j]);
      else
        neg += softplus(scores[i][j]);
    }
  return pos / static_cast<double>(B) + neg / static_cast<double>(B * (B - 1));
}

// u^T W v evaluated with scalar loops.
inline double flat_bilinear(const std::vector<double>& u,
                            const std::vector<std::vector<double>>& w,
                            const std::vector<double>& v) {
  double acc = 0;
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) acc += u[i] * w[i][j] * v[j];
  return acc;
}

// Reference Adam trace on scalars (bias-corrected).
struct ScalarAdam {
  double lr, b1, b2, eps;
  double m = 0, v = 0;
  long t = 0;
  double step(double param, double grad) {
    ++t;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    double mhat = m / (1 - std::pow(b1, t));
    double vhat = v / (1 - std::pow(b2, t));
    return param - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// Confusion-matrix based metrics.
struct MetricOracle {
  double accuracy = 0;
  double f1_weighted = 0;
  double f1_macro = 0;
};

inline MetricOracle confusion_metrics(const std::vector<int>& preds,
                                      const std::vector<int>& labels) {
  MetricOracle out;
  std::size_t n = labels.size();
  std::map<int, std::map<int, long>> conf;  // true -> pred -> count
  std::map<int, long> true_count, pred_count;
  long correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    conf[labels[i]][preds[i]]++;
    true_count[labels[i]]++;
    pred_count[preds[i]]++;
    if (labels[i] == preds[i]) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  double weighted = 0, macro = 0;
  for (auto& [cls, cnt] : true_count) {
    long tp = conf[cls][cls];
    long fp = pred_count[cls] - tp;
    long fn = cnt - tp;
    double p = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    double r = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    double f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    weighted += f1 * static_cast<double>(cnt) / static_cast<double>(n);
    macro += f1;
  }
  out.f1_weighted = weighted;
  out.f1_macro = macro / static_cast<double>(true_count.size());
  return out;
}

// Shannon entropy (natural log) of an empirical distribution over byte values.
inline double label_entropy(const std::vector<std::uint8_t>& values) {
  std::map<int, long> counts;
  for (auto v : values) counts[v]++;
  double h = 0;
  for (auto& [k, c] : counts) {
    double p = static_cast<double>(c) / static_cast<double>(values.size());
    h -= p * std::log(p);
  }
  return h;
}

}  // namespace oracles
