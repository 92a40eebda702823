#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seqtrojan/dataset.hpp"
#include "seqtrojan/tensor.hpp"

namespace seqtrojan {

enum class EncoderKind { Lstm, LstmAttention, Cnn, Transformer };

std::string_view to_string(EncoderKind kind);
EncoderKind parse_encoder_kind(std::string_view text);

struct ModelSpec {
  EncoderKind encoder = EncoderKind::Lstm;
  std::size_t vocab_size = 0;
  std::size_t emb_dim = 128;
  std::size_t hidden_dim = 128;       // recurrent encoders
  std::size_t n_attention_heads = 4;  // transformer
  std::size_t n_layers = 1;           // transformer
  std::size_t ff_dim = 256;           // transformer
  std::size_t cnn_kernel_min = 2;
  std::size_t cnn_kernel_max = 19;
  std::size_t n_classes = 2;
  std::size_t max_len = 200;
  bool three_heads = false;

  void validate() const;
  std::size_t encoding_dim() const;
  std::size_t kernel_count() const { return cnn_kernel_max - cnn_kernel_min + 1; }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

inline constexpr std::string_view kSingleHead = "head";
inline constexpr std::array<std::string_view, 3> kThreeHeads = {"head.clean", "head.poisoned",
                                                                 "head.detector"};

struct TrainedModel {
  ModelSpec spec;
  ParameterStore params;

  std::size_t head_count() const { return spec.three_heads ? 3 : 1; }
};

TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed);

struct ClassProbabilities {
  std::vector<double> p1;
  std::vector<int> label;

  std::size_t size() const { return p1.size(); }
  void append(const ClassProbabilities& other);
};

// p1 = softmax(logits)[1] per row; label = 1 iff p1 >= 0.5.
ClassProbabilities probabilities_from_logits(const Matrix& logits);

// Result of running an encoder over a batch, with whatever state its
// backward pass needs.
class EncoderTape {
 public:
  virtual ~EncoderTape() = default;
  const Matrix& output() const { return output_; }
  // Accumulates parameter gradients for d(loss)/d(output) = d_output.
  virtual void backward(const Matrix& d_output, Gradients& grads) const = 0;

 protected:
  Matrix output_;
};

std::unique_ptr<EncoderTape> encode_lstm(const ModelSpec& spec, const ParameterStore& params,
                                         const PaddedBatch& batch);
std::unique_ptr<EncoderTape> encode_lstm_att(const ModelSpec& spec, const ParameterStore& params,
                                             const PaddedBatch& batch);
std::unique_ptr<EncoderTape> encode_cnn(const ModelSpec& spec, const ParameterStore& params,
                                        const PaddedBatch& batch);
std::unique_ptr<EncoderTape> encode_transformer(const ModelSpec& spec, const ParameterStore& params,
                                                const PaddedBatch& batch);

std::unique_ptr<EncoderTape> encode(const TrainedModel& model, const PaddedBatch& batch);

// Sinusoidal position table, rows = positions.
Matrix positional_encoding(std::size_t positions, std::size_t dim);

// Attention weights of the lstm_att encoder for one batch, per example over
// its unpadded positions. Exposed for inspection and tests.
std::vector<std::vector<double>> lstm_attention_weights(const ModelSpec& spec,
                                                        const ParameterStore& params,
                                                        const PaddedBatch& batch);

struct ForwardPass {
  std::unique_ptr<EncoderTape> tape;
  std::vector<Matrix> logits;  // one rows x 2 block per head
};

ForwardPass forward_pass(const TrainedModel& model, const PaddedBatch& batch);
void backward_pass(const TrainedModel& model, const ForwardPass& pass,
                   std::span<const Matrix> d_logits, Gradients& grads);

// Throws a vocabulary error for ids outside [1, vocab_size).
void check_token_ids(const TrainedModel& model, const PaddedBatch& batch);

// Single-head: that head. Three-head: the routed probabilities.
ClassProbabilities forward(const TrainedModel& model, const PaddedBatch& batch);

struct HeadOutputs {
  ClassProbabilities clean;
  ClassProbabilities poisoned;
  ClassProbabilities detector;

  void append(const HeadOutputs& other);
};

HeadOutputs forward_three_heads(const TrainedModel& model, const PaddedBatch& batch);

int route_prediction(int detector_label, int clean_label, int poisoned_label);
std::vector<int> route_prediction(const HeadOutputs& outputs);
// Probabilities of the head each example is routed to.
ClassProbabilities route_probabilities(const HeadOutputs& outputs);

// Batched evaluation over a whole dataset.
ClassProbabilities predict(const TrainedModel& model, const SequenceDataset& ds,
                           std::size_t batch_size = 128);
HeadOutputs predict_heads(const TrainedModel& model, const SequenceDataset& ds,
                          std::size_t batch_size = 128);

// Self-describing checkpoint: magic, JSON spec block, named float64 tensors.
std::string serialize_checkpoint(const TrainedModel& model);
TrainedModel deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace seqtrojan
