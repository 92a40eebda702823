#include "seqtrojan/reference.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "seqtrojan/error.hpp"

namespace seqtrojan::reference {

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec embed(const Matrix& emb, TokenId t) {
  Vec v(static_cast<std::size_t>(emb.cols()));
  for (Index k = 0; k < emb.cols(); ++k) v[static_cast<std::size_t>(k)] = emb(t, k);
  return v;
}

// y = x * W + b for a row vector x.
Vec affine(const Vec& x, const Matrix& w, const Matrix* b) {
  Vec y(static_cast<std::size_t>(w.cols()), 0.0);
  for (Index j = 0; j < w.cols(); ++j) {
    double s = b ? (*b)(0, j) : 0.0;
    for (Index i = 0; i < w.rows(); ++i) s += x[static_cast<std::size_t>(i)] * w(i, j);
    y[static_cast<std::size_t>(j)] = s;
  }
  return y;
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Mat lstm_states(const TrainedModel& m, std::span<const TokenId> tokens) {
  const Matrix& emb = m.params["embedding"];
  const Matrix& w_in = m.params["lstm.w_input"];
  const Matrix& w_h = m.params["lstm.w_hidden"];
  const Matrix& b = m.params["lstm.bias"];
  const std::size_t H = m.spec.hidden_dim;
  Vec h(H, 0.0), c(H, 0.0);
  Mat states;
  for (TokenId t : tokens) {
    const Vec x = embed(emb, t);
    const Vec gx = affine(x, w_in, &b);
    const Vec gh = affine(h, w_h, nullptr);
    Vec nh(H), nc(H);
    for (std::size_t k = 0; k < H; ++k) {
      const double i = sigmoid(gx[k] + gh[k]);
      const double f = sigmoid(gx[H + k] + gh[H + k]);
      const double g = std::tanh(gx[2 * H + k] + gh[2 * H + k]);
      const double o = sigmoid(gx[3 * H + k] + gh[3 * H + k]);
      nc[k] = f * c[k] + i * g;
      nh[k] = o * std::tanh(nc[k]);
    }
    h = nh;
    c = nc;
    states.push_back(h);
  }
  return states;
}

Vec lstm_att(const TrainedModel& m, std::span<const TokenId> tokens) {
  const Mat hs = lstm_states(m, tokens);
  const Vec& q = hs.back();
  const double scale = std::sqrt(static_cast<double>(m.spec.hidden_dim));
  Vec score(hs.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < hs.size(); ++t) mx = std::max(mx, score[t] = dot(q, hs[t]) / scale);
  double z = 0.0;
  for (auto& s : score) z += (s = std::exp(s - mx));
  Vec out(q.size(), 0.0);
  for (std::size_t t = 0; t < hs.size(); ++t) {
    for (std::size_t k = 0; k < q.size(); ++k) out[k] += score[t] / z * hs[t][k];
  }
  return out;
}

Vec cnn(const TrainedModel& m, std::span<const TokenId> tokens) {
  const Matrix& emb = m.params["embedding"];
  const Matrix& kernels = m.params["cnn.kernels"];
  const Matrix& bias = m.params["cnn.bias"];
  Vec out;
  Index off = 0;
  Index k = 0;
  for (auto h = m.spec.cnn_kernel_min; h <= m.spec.cnn_kernel_max; ++h, ++k) {
    double best = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t p = 0; p + h <= tokens.size(); ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        for (Index e = 0; e < emb.cols(); ++e) {
          s += emb(tokens[p + j], e) * kernels(off + static_cast<Index>(j), e);
        }
      }
      best = std::max(best, s);
      any = true;
    }
    out.push_back((any ? best : 0.0) + bias(0, k));
    off += static_cast<Index>(h);
  }
  return out;
}

void layer_norm_rows(Mat& x, const Matrix& gamma, const Matrix& beta) {
  for (auto& row : x) {
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    const double rstd = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t k = 0; k < row.size(); ++k) {
      row[k] = (row[k] - mean) * rstd * gamma(0, static_cast<Index>(k)) + beta(0, static_cast<Index>(k));
    }
  }
}

Vec transformer(const TrainedModel& m, std::span<const TokenId> tokens) {
  const std::size_t d = m.spec.emb_dim;
  const std::size_t heads = m.spec.n_attention_heads;
  const std::size_t dh = d / heads;
  const std::size_t L = tokens.size();
  const Matrix& emb = m.params["embedding"];

  Mat x(L, Vec(d));
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      const double pe = i % 2 == 0 ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
      x[t][i] = emb(tokens[t], static_cast<Index>(i)) + pe;
    }
  }

  for (std::size_t l = 0; l < m.spec.n_layers; ++l) {
    const std::string p = "tf" + std::to_string(l) + ".";
    Mat qkv(L);
    for (std::size_t t = 0; t < L; ++t) qkv[t] = affine(x[t], m.params[p + "w_qkv"], &m.params[p + "b_qkv"]);
    Mat ctx(L, Vec(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        Vec s(L);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          double v = 0.0;
          for (std::size_t e = 0; e < dh; ++e) v += qkv[i][h * dh + e] * qkv[j][d + h * dh + e];
          s[j] = v / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[j]);
        }
        double z = 0.0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < L; ++j) {
          for (std::size_t e = 0; e < dh; ++e) ctx[i][h * dh + e] += s[j] / z * qkv[j][2 * d + h * dh + e];
        }
      }
    }
    Mat y(L);
    for (std::size_t t = 0; t < L; ++t) {
      y[t] = affine(ctx[t], m.params[p + "w_out"], &m.params[p + "b_out"]);
      for (std::size_t k = 0; k < d; ++k) y[t][k] += x[t][k];
    }
    layer_norm_rows(y, m.params[p + "ln1_gamma"], m.params[p + "ln1_beta"]);
    Mat z(L);
    for (std::size_t t = 0; t < L; ++t) {
      Vec hidden = affine(y[t], m.params[p + "w_ff1"], &m.params[p + "b_ff1"]);
      for (auto& v : hidden) v = std::max(v, 0.0);
      z[t] = affine(hidden, m.params[p + "w_ff2"], &m.params[p + "b_ff2"]);
      for (std::size_t k = 0; k < d; ++k) z[t][k] += y[t][k];
    }
    layer_norm_rows(z, m.params[p + "ln2_gamma"], m.params[p + "ln2_beta"]);
    x = std::move(z);
  }

  Vec out(d, -std::numeric_limits<double>::infinity());
  for (const auto& row : x) {
    for (std::size_t k = 0; k < d; ++k) out[k] = std::max(out[k], row[k]);
  }
  return out;
}

}  // namespace

std::vector<double> encode(const TrainedModel& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorKind::Length, "empty sequence");
  switch (model.spec.encoder) {
    case EncoderKind::Lstm: return lstm_states(model, tokens).back();
    case EncoderKind::LstmAttention: return lstm_att(model, tokens);
    case EncoderKind::Cnn: return cnn(model, tokens);
    case EncoderKind::Transformer: return transformer(model, tokens);
  }
  return {};
}

std::vector<double> logits(const TrainedModel& model, std::span<const TokenId> tokens) {
  const Vec enc = encode(model, tokens);
  std::vector<std::string> heads;
  if (model.spec.three_heads) {
    for (auto h : kThreeHeads) heads.emplace_back(h);
  } else {
    heads.emplace_back(kSingleHead);
  }
  Vec out;
  for (const auto& h : heads) {
    const Vec z = affine(enc, model.params[h + ".weight"], &model.params[h + ".bias"]);
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

Matrix encode_batch(const TrainedModel& model, const PaddedBatch& batch) {
  Matrix out(static_cast<Index>(batch.rows), static_cast<Index>(model.spec.encoding_dim()));
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const Vec e = encode(model, batch.row(r));
    for (std::size_t k = 0; k < e.size(); ++k) out(static_cast<Index>(r), static_cast<Index>(k)) = e[k];
  }
  return out;
}

}  // namespace seqtrojan::reference
