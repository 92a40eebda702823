// Bank of single-channel (h x emb_dim) convolutions, one per kernel height,
// each followed by a global max over windows that lie fully inside the
// unpadded prefix. A row shorter than h has no valid window; that kernel
// outputs its bias.

#include <limits>

#include <omp.h>

#include "seqtrojan/model.hpp"

namespace seqtrojan {

namespace {

class CnnTape final : public EncoderTape {
 public:
  CnnTape(const ModelSpec& spec, const ParameterStore& params, const PaddedBatch& batch)
      : params_(params), batch_(batch) {
    const Matrix& emb = params["embedding"];
    const Matrix& kernels = params["cnn.kernels"];
    const Matrix& bias = params["cnn.bias"];
    for (auto h = spec.cnn_kernel_min; h <= spec.cnn_kernel_max; ++h) heights_.push_back(h);
    offsets_.resize(heights_.size());
    std::size_t off = 0;
    for (std::size_t k = 0; k < heights_.size(); ++k) {
      offsets_[k] = off;
      off += heights_[k];
    }

    // table(v, off_h + j) = <embedding[v], kernel_h[j]>
    table_.noalias() = emb * kernels.transpose();

    const auto B = static_cast<Index>(batch.rows);
    const auto K = static_cast<Index>(heights_.size());
    output_.resize(B, K);
    argmax_.assign(batch.rows * heights_.size(), -1);
#pragma omp parallel for schedule(dynamic)
    for (Index r = 0; r < B; ++r) {
      const auto row = batch_.row(static_cast<std::size_t>(r));
      for (Index k = 0; k < K; ++k) {
        const std::size_t h = heights_[static_cast<std::size_t>(k)];
        const auto off = static_cast<Index>(offsets_[static_cast<std::size_t>(k)]);
        double best = -std::numeric_limits<double>::infinity();
        std::ptrdiff_t best_pos = -1;
        if (row.size() >= h) {
          for (std::size_t p = 0; p + h <= row.size(); ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < h; ++j) s += table_(row[p + j], off + static_cast<Index>(j));
            if (s > best) {
              best = s;
              best_pos = static_cast<std::ptrdiff_t>(p);
            }
          }
        }
        output_(r, k) = (best_pos >= 0 ? best : 0.0) + bias(0, k);
        argmax_[static_cast<std::size_t>(r) * heights_.size() + static_cast<std::size_t>(k)] = best_pos;
      }
    }
  }

  void backward(const Matrix& d_out, Gradients& grads) const override {
    const Matrix& emb = params_["embedding"];
    const Matrix& kernels = params_["cnn.kernels"];
    Matrix d_table = Matrix::Zero(table_.rows(), table_.cols());
    for (std::size_t r = 0; r < batch_.rows; ++r) {
      const auto row = batch_.row(r);
      for (std::size_t k = 0; k < heights_.size(); ++k) {
        const auto p = argmax_[r * heights_.size() + k];
        if (p < 0) continue;
        const double g = d_out(static_cast<Index>(r), static_cast<Index>(k));
        for (std::size_t j = 0; j < heights_[k]; ++j) {
          d_table(row[static_cast<std::size_t>(p) + j], static_cast<Index>(offsets_[k] + j)) += g;
        }
      }
    }
    grads[params_.index_of("cnn.bias")] += d_out.colwise().sum();
    grads[params_.index_of("cnn.kernels")].noalias() += d_table.transpose() * emb;
    grads[params_.index_of("embedding")].noalias() += d_table * kernels;
  }

 private:
  const ParameterStore& params_;
  PaddedBatch batch_;
  std::vector<std::size_t> heights_;
  std::vector<std::size_t> offsets_;
  Matrix table_;
  std::vector<std::ptrdiff_t> argmax_;
};

}  // namespace

std::unique_ptr<EncoderTape> encode_cnn(const ModelSpec& spec, const ParameterStore& params,
                                        const PaddedBatch& batch) {
  return std::make_unique<CnnTape>(spec, params, batch);
}

}  // namespace seqtrojan
