// Post-norm transformer encoder over packed token rows: every row of the
// working matrices is one real (unpadded) token, examples occupy contiguous
// row ranges, and attention runs per example. Padding therefore never
// reaches attention, the feed-forward block or the max-pool.

#include <algorithm>
#include <cmath>
#include <limits>

#include <omp.h>

#include "seqtrojan/model.hpp"

namespace seqtrojan {

Matrix positional_encoding(std::size_t positions, std::size_t dim) {
  Matrix pe(static_cast<Index>(positions), static_cast<Index>(dim));
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(static_cast<Index>(pos), static_cast<Index>(i)) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

namespace {

constexpr double kLayerNormEps = 1e-5;

struct LayerNames {
  std::string w_qkv, b_qkv, w_out, b_out, ln1_gamma, ln1_beta, w_ff1, b_ff1, w_ff2, b_ff2, ln2_gamma,
      ln2_beta;

  explicit LayerNames(std::size_t l) {
    const std::string p = "tf" + std::to_string(l) + ".";
    w_qkv = p + "w_qkv";
    b_qkv = p + "b_qkv";
    w_out = p + "w_out";
    b_out = p + "b_out";
    ln1_gamma = p + "ln1_gamma";
    ln1_beta = p + "ln1_beta";
    w_ff1 = p + "w_ff1";
    b_ff1 = p + "b_ff1";
    w_ff2 = p + "w_ff2";
    b_ff2 = p + "b_ff2";
    ln2_gamma = p + "ln2_gamma";
    ln2_beta = p + "ln2_beta";
  }
};

struct LayerCache {
  Matrix input;
  Matrix qkv;
  std::vector<Matrix> probs;  // [example * heads + head], L x L
  Matrix context;             // concatenated head outputs
  Matrix xhat1;
  Eigen::VectorXd rstd1;
  Matrix z1;
  Matrix ff_pre;
  Matrix ff_act;
  Matrix xhat2;
  Eigen::VectorXd rstd2;
  Matrix z2;
};

void layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta, Matrix& xhat,
                Eigen::VectorXd& rstd, Matrix& y) {
  const Index n = x.rows();
  const double d = static_cast<double>(x.cols());
  xhat.resize(x.rows(), x.cols());
  y.resize(x.rows(), x.cols());
  rstd.resize(n);
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) {
    const double mean = x.row(i).sum() / d;
    const double var = (x.row(i).array() - mean).square().sum() / d;
    rstd(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd(i);
    y.row(i) = xhat.row(i).array() * gamma.row(0).array() + beta.row(0).array();
  }
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Eigen::VectorXd& rstd,
                           const Matrix& gamma, Matrix& d_gamma, Matrix& d_beta) {
  d_gamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_beta += dy.colwise().sum();
  Matrix dx(dy.rows(), dy.cols());
  const double d = static_cast<double>(dy.cols());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < dy.rows(); ++i) {
    const RowVector g = (dy.row(i).array() * gamma.row(0).array()).matrix();
    const double mean_g = g.sum() / d;
    const double mean_gx = g.dot(xhat.row(i)) / d;
    dx.row(i) = rstd(i) * (g.array() - mean_g - xhat.row(i).array() * mean_gx);
  }
  return dx;
}

class TransformerTape final : public EncoderTape {
 public:
  TransformerTape(const ModelSpec& spec, const ParameterStore& params, const PaddedBatch& batch)
      : params_(params),
        batch_(batch),
        dim_(static_cast<Index>(spec.emb_dim)),
        heads_(static_cast<Index>(spec.n_attention_heads)) {
    for (std::size_t l = 0; l < spec.n_layers; ++l) names_.emplace_back(l);
    offsets_.resize(batch.rows + 1, 0);
    std::size_t longest = 0;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      offsets_[r + 1] = offsets_[r] + static_cast<Index>(batch.lengths[r]);
      longest = std::max(longest, batch.lengths[r]);
    }
    const Index n = offsets_.back();
    const Matrix& emb = params["embedding"];
    const Matrix pe = positional_encoding(longest, spec.emb_dim);

    Matrix x(n, dim_);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      for (std::size_t t = 0; t < batch.lengths[r]; ++t) {
        x.row(offsets_[r] + static_cast<Index>(t)) = emb.row(batch.at(r, t)) + pe.row(static_cast<Index>(t));
      }
    }

    caches_.resize(names_.size());
    for (std::size_t l = 0; l < names_.size(); ++l) {
      forward_layer(l, std::move(x));
      x = caches_[l].z2;
    }

    const auto B = static_cast<Index>(batch.rows);
    output_.resize(B, dim_);
    argmax_.resize(B, dim_);
#pragma omp parallel for schedule(static)
    for (Index r = 0; r < B; ++r) {
      for (Index c = 0; c < dim_; ++c) {
        double best = -std::numeric_limits<double>::infinity();
        Index at = offsets_[static_cast<std::size_t>(r)];
        for (Index i = offsets_[static_cast<std::size_t>(r)]; i < offsets_[static_cast<std::size_t>(r) + 1]; ++i) {
          if (x(i, c) > best) {
            best = x(i, c);
            at = i;
          }
        }
        output_(r, c) = best;
        argmax_(r, c) = at;
      }
    }
  }

  void backward(const Matrix& d_out, Gradients& grads) const override {
    const Index n = offsets_.back();
    Matrix dx = Matrix::Zero(n, dim_);
    for (Index r = 0; r < d_out.rows(); ++r) {
      for (Index c = 0; c < dim_; ++c) dx(argmax_(r, c), c) += d_out(r, c);
    }
    for (std::size_t l = names_.size(); l-- > 0;) dx = backward_layer(l, dx, grads);

    Matrix& d_emb = grads[params_.index_of("embedding")];
    for (std::size_t r = 0; r < batch_.rows; ++r) {
      for (std::size_t t = 0; t < batch_.lengths[r]; ++t) {
        d_emb.row(batch_.at(r, t)) += dx.row(offsets_[r] + static_cast<Index>(t));
      }
    }
  }

 private:
  Index head_dim() const { return dim_ / heads_; }

  void forward_layer(std::size_t l, Matrix x) {
    const auto& nm = names_[l];
    auto& c = caches_[l];
    const Index d = dim_;
    const Index dh = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    c.input = std::move(x);
    c.qkv.noalias() = c.input * params_[nm.w_qkv];
    c.qkv.rowwise() += params_[nm.b_qkv].row(0);

    const auto B = static_cast<Index>(batch_.rows);
    c.probs.assign(batch_.rows * static_cast<std::size_t>(heads_), Matrix());
    c.context.resize(c.input.rows(), d);
#pragma omp parallel for schedule(dynamic)
    for (Index r = 0; r < B; ++r) {
      const Index off = offsets_[static_cast<std::size_t>(r)];
      const Index len = offsets_[static_cast<std::size_t>(r) + 1] - off;
      for (Index h = 0; h < heads_; ++h) {
        const auto q = c.qkv.block(off, h * dh, len, dh);
        const auto k = c.qkv.block(off, d + h * dh, len, dh);
        const auto v = c.qkv.block(off, 2 * d + h * dh, len, dh);
        Matrix p = (q * k.transpose()) * scale;
        for (Index i = 0; i < len; ++i) {
          const double mx = p.row(i).maxCoeff();
          p.row(i) = (p.row(i).array() - mx).exp();
          p.row(i) /= p.row(i).sum();
        }
        c.context.block(off, h * dh, len, dh).noalias() = p * v;
        c.probs[static_cast<std::size_t>(r * heads_ + h)] = std::move(p);
      }
    }

    Matrix y1 = c.input;
    y1.noalias() += c.context * params_[nm.w_out];
    y1.rowwise() += params_[nm.b_out].row(0);
    layer_norm(y1, params_[nm.ln1_gamma], params_[nm.ln1_beta], c.xhat1, c.rstd1, c.z1);

    c.ff_pre.noalias() = c.z1 * params_[nm.w_ff1];
    c.ff_pre.rowwise() += params_[nm.b_ff1].row(0);
    c.ff_act = c.ff_pre.cwiseMax(0.0);
    Matrix y2 = c.z1;
    y2.noalias() += c.ff_act * params_[nm.w_ff2];
    y2.rowwise() += params_[nm.b_ff2].row(0);
    layer_norm(y2, params_[nm.ln2_gamma], params_[nm.ln2_beta], c.xhat2, c.rstd2, c.z2);
  }

  Matrix backward_layer(std::size_t l, const Matrix& dz2, Gradients& grads) const {
    const auto& nm = names_[l];
    const auto& c = caches_[l];
    const Index d = dim_;
    const Index dh = head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto g = [&](const std::string& name) -> Matrix& { return grads[params_.index_of(name)]; };

    Matrix dy2 = layer_norm_backward(dz2, c.xhat2, c.rstd2, params_[nm.ln2_gamma], g(nm.ln2_gamma),
                                     g(nm.ln2_beta));
    g(nm.w_ff2).noalias() += c.ff_act.transpose() * dy2;
    g(nm.b_ff2) += dy2.colwise().sum();
    Matrix d_pre = dy2 * params_[nm.w_ff2].transpose();
    d_pre.array() *= (c.ff_pre.array() > 0.0).cast<double>();
    g(nm.w_ff1).noalias() += c.z1.transpose() * d_pre;
    g(nm.b_ff1) += d_pre.colwise().sum();
    Matrix dz1 = dy2;
    dz1.noalias() += d_pre * params_[nm.w_ff1].transpose();

    Matrix dy1 = layer_norm_backward(dz1, c.xhat1, c.rstd1, params_[nm.ln1_gamma], g(nm.ln1_gamma),
                                     g(nm.ln1_beta));
    g(nm.w_out).noalias() += c.context.transpose() * dy1;
    g(nm.b_out) += dy1.colwise().sum();
    const Matrix d_context = dy1 * params_[nm.w_out].transpose();

    Matrix d_qkv(c.qkv.rows(), c.qkv.cols());
    const auto B = static_cast<Index>(batch_.rows);
#pragma omp parallel for schedule(dynamic)
    for (Index r = 0; r < B; ++r) {
      const Index off = offsets_[static_cast<std::size_t>(r)];
      const Index len = offsets_[static_cast<std::size_t>(r) + 1] - off;
      for (Index h = 0; h < heads_; ++h) {
        const Matrix& p = c.probs[static_cast<std::size_t>(r * heads_ + h)];
        const auto q = c.qkv.block(off, h * dh, len, dh);
        const auto k = c.qkv.block(off, d + h * dh, len, dh);
        const auto v = c.qkv.block(off, 2 * d + h * dh, len, dh);
        const auto d_o = d_context.block(off, h * dh, len, dh);
        const Matrix dp = d_o * v.transpose();
        d_qkv.block(off, 2 * d + h * dh, len, dh).noalias() = p.transpose() * d_o;
        Matrix ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        d_qkv.block(off, h * dh, len, dh).noalias() = ds * k;
        d_qkv.block(off, d + h * dh, len, dh).noalias() = ds.transpose() * q;
      }
    }

    g(nm.w_qkv).noalias() += c.input.transpose() * d_qkv;
    g(nm.b_qkv) += d_qkv.colwise().sum();
    Matrix dx = dy1;
    dx.noalias() += d_qkv * params_[nm.w_qkv].transpose();
    return dx;
  }

  const ParameterStore& params_;
  PaddedBatch batch_;
  Index dim_;
  Index heads_;
  std::vector<LayerNames> names_;
  std::vector<Index> offsets_;
  std::vector<LayerCache> caches_;
  Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax_;
};

}  // namespace

std::unique_ptr<EncoderTape> encode_transformer(const ModelSpec& spec, const ParameterStore& params,
                                                const PaddedBatch& batch) {
  return std::make_unique<TransformerTape>(spec, params, batch);
}

}  // namespace seqtrojan
