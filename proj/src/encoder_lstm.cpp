// Single-layer LSTM over the unpadded prefix of each row, optionally followed
// by scaled dot-product attention with the last hidden state as the query.
//
// Rows are processed in descending-length order so the rows still active at
// step t always form a prefix block; the input projection is folded into a
// per-token table (embedding * W_input + bias) gathered at each step.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <omp.h>

#include "seqtrojan/error.hpp"
#include "seqtrojan/model.hpp"

namespace seqtrojan {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

class LstmTape final : public EncoderTape {
 public:
  LstmTape(const ModelSpec& spec, const ParameterStore& params, const PaddedBatch& batch, bool attention)
      : params_(params),
        batch_(batch),
        hidden_dim_(static_cast<Index>(spec.hidden_dim)),
        attention_(attention) {
    const Matrix& emb = params["embedding"];
    const Matrix& w_in = params["lstm.w_input"];
    const Matrix& w_h = params["lstm.w_hidden"];
    const Matrix& bias = params["lstm.bias"];
    const Index H = hidden_dim_;
    const auto B = static_cast<Index>(batch.rows);

    table_.noalias() = emb * w_in;
    table_.rowwise() += bias.row(0);

    order_.resize(batch.rows);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return batch.lengths[a] > batch.lengths[b]; });
    const std::size_t steps = batch.rows ? batch.lengths[order_[0]] : 0;
    active_.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      active_[t] = static_cast<Index>(std::count_if(batch.lengths.begin(), batch.lengths.end(),
                                                    [t](std::size_t len) { return len > t; }));
    }

    gates_.resize(steps);
    cells_.resize(steps);
    tanh_cells_.resize(steps);
    hidden_.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const Index n = active_[t];
      Matrix g(n, 4 * H);
      for (Index j = 0; j < n; ++j) g.row(j) = table_.row(token(j, t));
      if (t > 0) g.noalias() += hidden_[t - 1].topRows(n) * w_h;

      Matrix c(n, H), tc(n, H), h(n, H);
      const Matrix* c_prev = t > 0 ? &cells_[t - 1] : nullptr;
#pragma omp parallel for schedule(static)
      for (Index j = 0; j < n; ++j) {
        for (Index k = 0; k < H; ++k) {
          const double i = sigmoid(g(j, k));
          const double f = sigmoid(g(j, H + k));
          const double gg = std::tanh(g(j, 2 * H + k));
          const double o = sigmoid(g(j, 3 * H + k));
          g(j, k) = i;
          g(j, H + k) = f;
          g(j, 2 * H + k) = gg;
          g(j, 3 * H + k) = o;
          const double cv = (c_prev ? f * (*c_prev)(j, k) : 0.0) + i * gg;
          c(j, k) = cv;
          tc(j, k) = std::tanh(cv);
          h(j, k) = o * tc(j, k);
        }
      }
      gates_[t] = std::move(g);
      cells_[t] = std::move(c);
      tanh_cells_[t] = std::move(tc);
      hidden_[t] = std::move(h);
    }

    output_.resize(B, H);
    if (!attention_) {
      for (std::size_t j = 0; j < order_.size(); ++j) {
        output_.row(static_cast<Index>(order_[j])) =
            hidden_[length(j) - 1].row(static_cast<Index>(j));
      }
      return;
    }

    weights_.resize(batch.rows);
    const double scale = 1.0 / std::sqrt(static_cast<double>(H));
#pragma omp parallel for schedule(dynamic)
    for (Index jj = 0; jj < static_cast<Index>(order_.size()); ++jj) {
      const auto j = static_cast<std::size_t>(jj);
      const std::size_t len = length(j);
      const RowVector q = hidden_[len - 1].row(jj);
      std::vector<double> a(len);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < len; ++t) {
        a[t] = hidden_[t].row(jj).dot(q) * scale;
        mx = std::max(mx, a[t]);
      }
      double z = 0.0;
      for (auto& v : a) z += (v = std::exp(v - mx));
      RowVector ctx = RowVector::Zero(H);
      for (std::size_t t = 0; t < len; ++t) {
        a[t] /= z;
        ctx.noalias() += a[t] * hidden_[t].row(jj);
      }
      output_.row(static_cast<Index>(order_[j])) = ctx;
      weights_[j] = std::move(a);
    }
  }

  void backward(const Matrix& d_out, Gradients& grads) const override {
    const Matrix& emb = params_["embedding"];
    const Matrix& w_in = params_["lstm.w_input"];
    const Matrix& w_h = params_["lstm.w_hidden"];
    const Index H = hidden_dim_;
    const std::size_t steps = active_.size();

    std::vector<Matrix> inject(steps);
    for (std::size_t t = 0; t < steps; ++t) inject[t] = Matrix::Zero(active_[t], H);

    if (!attention_) {
      for (std::size_t j = 0; j < order_.size(); ++j) {
        inject[length(j) - 1].row(static_cast<Index>(j)) = d_out.row(static_cast<Index>(order_[j]));
      }
    } else {
      const double scale = 1.0 / std::sqrt(static_cast<double>(H));
#pragma omp parallel for schedule(dynamic)
      for (Index jj = 0; jj < static_cast<Index>(order_.size()); ++jj) {
        const auto j = static_cast<std::size_t>(jj);
        const std::size_t len = length(j);
        const auto& a = weights_[j];
        const RowVector dctx = d_out.row(static_cast<Index>(order_[j]));
        const RowVector q = hidden_[len - 1].row(jj);
        std::vector<double> da(len);
        double weighted = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
          da[t] = dctx.dot(hidden_[t].row(jj));
          weighted += a[t] * da[t];
        }
        RowVector dq = RowVector::Zero(H);
        for (std::size_t t = 0; t < len; ++t) {
          const double ds = a[t] * (da[t] - weighted) * scale;
          inject[t].row(jj) += a[t] * dctx + ds * q;
          dq.noalias() += ds * hidden_[t].row(jj);
        }
        inject[len - 1].row(jj) += dq;
      }
    }

    Matrix d_table = Matrix::Zero(table_.rows(), table_.cols());
    Matrix& d_wh = grads[params_.index_of("lstm.w_hidden")];
    Matrix dh_next(0, H), dc_next(0, H);
    for (std::size_t t = steps; t-- > 0;) {
      const Index n = active_[t];
      Matrix dh = std::move(inject[t]);
      dh.topRows(dh_next.rows()) += dh_next;
      Matrix dc = Matrix::Zero(n, H);
      dc.topRows(dc_next.rows()) = dc_next;

      const Matrix& g = gates_[t];
      const Matrix& tc = tanh_cells_[t];
      const Matrix* c_prev = t > 0 ? &cells_[t - 1] : nullptr;
      Matrix da(n, 4 * H);
      Matrix dc_prev(n, H);
#pragma omp parallel for schedule(static)
      for (Index j = 0; j < n; ++j) {
        for (Index k = 0; k < H; ++k) {
          const double i = g(j, k), f = g(j, H + k), gg = g(j, 2 * H + k), o = g(j, 3 * H + k);
          const double cp = c_prev ? (*c_prev)(j, k) : 0.0;
          const double dcv = dc(j, k) + dh(j, k) * o * (1.0 - tc(j, k) * tc(j, k));
          da(j, k) = dcv * gg * i * (1.0 - i);
          da(j, H + k) = dcv * cp * f * (1.0 - f);
          da(j, 2 * H + k) = dcv * i * (1.0 - gg * gg);
          da(j, 3 * H + k) = dh(j, k) * tc(j, k) * o * (1.0 - o);
          dc_prev(j, k) = dcv * f;
        }
      }
      for (Index j = 0; j < n; ++j) d_table.row(token(j, t)) += da.row(j);
      if (t > 0) {
        d_wh.noalias() += hidden_[t - 1].topRows(n).transpose() * da;
        dh_next.noalias() = da * w_h.transpose();
        dc_next = std::move(dc_prev);
      }
    }

    grads[params_.index_of("lstm.bias")] += d_table.colwise().sum();
    grads[params_.index_of("lstm.w_input")].noalias() += emb.transpose() * d_table;
    grads[params_.index_of("embedding")].noalias() += d_table * w_in.transpose();
  }

  std::vector<std::vector<double>> attention_by_row() const {
    std::vector<std::vector<double>> out(order_.size());
    for (std::size_t j = 0; j < order_.size(); ++j) out[order_[j]] = weights_[j];
    return out;
  }

 private:
  Index token(Index sorted_row, std::size_t t) const {
    return batch_.at(order_[static_cast<std::size_t>(sorted_row)], t);
  }
  std::size_t length(std::size_t sorted_row) const { return batch_.lengths[order_[sorted_row]]; }

  const ParameterStore& params_;
  PaddedBatch batch_;
  Index hidden_dim_;
  bool attention_;
  Matrix table_;
  std::vector<std::size_t> order_;
  std::vector<Index> active_;
  std::vector<Matrix> gates_;  // activated i, f, g, o
  std::vector<Matrix> cells_;
  std::vector<Matrix> tanh_cells_;
  std::vector<Matrix> hidden_;
  std::vector<std::vector<double>> weights_;
};

}  // namespace

std::unique_ptr<EncoderTape> encode_lstm(const ModelSpec& spec, const ParameterStore& params,
                                         const PaddedBatch& batch) {
  return std::make_unique<LstmTape>(spec, params, batch, false);
}

std::unique_ptr<EncoderTape> encode_lstm_att(const ModelSpec& spec, const ParameterStore& params,
                                             const PaddedBatch& batch) {
  return std::make_unique<LstmTape>(spec, params, batch, true);
}

std::vector<std::vector<double>> lstm_attention_weights(const ModelSpec& spec, const ParameterStore& params,
                                                        const PaddedBatch& batch) {
  return LstmTape(spec, params, batch, true).attention_by_row();
}

}  // namespace seqtrojan
