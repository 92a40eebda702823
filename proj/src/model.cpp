#include "seqtrojan/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seqtrojan/error.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan {

namespace {

void glorot(Matrix& m, Index fan_in, Index fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-a, a);
}

std::vector<std::string_view> head_names(const ModelSpec& spec) {
  if (spec.three_heads) return {kThreeHeads.begin(), kThreeHeads.end()};
  return {kSingleHead};
}

}  // namespace

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::Lstm: return "lstm";
    case EncoderKind::LstmAttention: return "lstm_att";
    case EncoderKind::Cnn: return "cnn";
    case EncoderKind::Transformer: return "transformer";
  }
  return "?";
}

EncoderKind parse_encoder_kind(std::string_view text) {
  for (auto k : {EncoderKind::Lstm, EncoderKind::LstmAttention, EncoderKind::Cnn,
                 EncoderKind::Transformer}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::Config, "unknown encoder kind '" + std::string(text) + "'");
}

void ModelSpec::validate() const {
  if (vocab_size < 2) throw Error(ErrorKind::Spec, "vocab_size must be >= 2");
  if (emb_dim == 0 || hidden_dim == 0) throw Error(ErrorKind::Spec, "dimensions must be positive");
  if (n_classes != 2) throw Error(ErrorKind::Spec, "only binary classification is supported");
  if (max_len == 0) throw Error(ErrorKind::Spec, "max_len must be positive");
  if (encoder == EncoderKind::Cnn) {
    if (cnn_kernel_min < 1 || cnn_kernel_max < cnn_kernel_min) {
      throw Error(ErrorKind::Spec, "invalid cnn kernel range");
    }
    if (max_len < cnn_kernel_max) {
      throw Error(ErrorKind::Spec, "cnn requires max_len >= largest kernel height (" +
                                       std::to_string(cnn_kernel_max) + ")");
    }
  }
  if (encoder == EncoderKind::Transformer) {
    if (n_attention_heads == 0 || emb_dim % n_attention_heads != 0) {
      throw Error(ErrorKind::Spec, "emb_dim must be divisible by n_attention_heads");
    }
    if (n_layers == 0 || ff_dim == 0) throw Error(ErrorKind::Spec, "transformer needs layers and ff_dim");
  }
}

std::size_t ModelSpec::encoding_dim() const {
  switch (encoder) {
    case EncoderKind::Lstm:
    case EncoderKind::LstmAttention: return hidden_dim;
    case EncoderKind::Cnn: return kernel_count();
    case EncoderKind::Transformer: return emb_dim;
  }
  return 0;
}

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = nlohmann::json{{"encoder", std::string(to_string(s.encoder))},
                     {"vocab_size", s.vocab_size},
                     {"emb_dim", s.emb_dim},
                     {"hidden_dim", s.hidden_dim},
                     {"n_attention_heads", s.n_attention_heads},
                     {"n_layers", s.n_layers},
                     {"ff_dim", s.ff_dim},
                     {"cnn_kernel_min", s.cnn_kernel_min},
                     {"cnn_kernel_max", s.cnn_kernel_max},
                     {"n_classes", s.n_classes},
                     {"max_len", s.max_len},
                     {"three_heads", s.three_heads}};
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  ModelSpec d;
  s.encoder = parse_encoder_kind(j.value("encoder", std::string(to_string(d.encoder))));
  s.vocab_size = j.value("vocab_size", d.vocab_size);
  s.emb_dim = j.value("emb_dim", d.emb_dim);
  s.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  s.n_attention_heads = j.value("n_attention_heads", d.n_attention_heads);
  s.n_layers = j.value("n_layers", d.n_layers);
  s.ff_dim = j.value("ff_dim", d.ff_dim);
  s.cnn_kernel_min = j.value("cnn_kernel_min", d.cnn_kernel_min);
  s.cnn_kernel_max = j.value("cnn_kernel_max", d.cnn_kernel_max);
  s.n_classes = j.value("n_classes", d.n_classes);
  s.max_len = j.value("max_len", d.max_len);
  s.three_heads = j.value("three_heads", d.three_heads);
}

TrainedModel init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  TrainedModel model{.spec = spec, .params = {}};
  auto& p = model.params;
  Rng rng(derive_seed(seed, 0x1417));
  const auto V = static_cast<Index>(spec.vocab_size);
  const auto E = static_cast<Index>(spec.emb_dim);
  const auto H = static_cast<Index>(spec.hidden_dim);

  glorot(p.add("embedding", ParamGroup::Embedding, V, E), V, E, rng);

  switch (spec.encoder) {
    case EncoderKind::Lstm:
    case EncoderKind::LstmAttention:
      glorot(p.add("lstm.w_input", ParamGroup::Encoder, E, 4 * H), E, 4 * H, rng);
      glorot(p.add("lstm.w_hidden", ParamGroup::Encoder, H, 4 * H), H, 4 * H, rng);
      p.add("lstm.bias", ParamGroup::Encoder, 1, 4 * H);
      break;
    case EncoderKind::Cnn: {
      Index rows = 0;
      for (auto h = spec.cnn_kernel_min; h <= spec.cnn_kernel_max; ++h) rows += static_cast<Index>(h);
      Matrix& k = p.add("cnn.kernels", ParamGroup::Encoder, rows, E);
      Index off = 0;
      for (auto h = spec.cnn_kernel_min; h <= spec.cnn_kernel_max; ++h) {
        const auto hh = static_cast<Index>(h);
        Matrix block(hh, E);
        glorot(block, hh * E, 1, rng);
        k.middleRows(off, hh) = block;
        off += hh;
      }
      p.add("cnn.bias", ParamGroup::Encoder, 1, static_cast<Index>(spec.kernel_count()));
      break;
    }
    case EncoderKind::Transformer: {
      const auto F = static_cast<Index>(spec.ff_dim);
      for (std::size_t l = 0; l < spec.n_layers; ++l) {
        const std::string pre = "tf" + std::to_string(l) + ".";
        glorot(p.add(pre + "w_qkv", ParamGroup::Encoder, E, 3 * E), E, 3 * E, rng);
        p.add(pre + "b_qkv", ParamGroup::Encoder, 1, 3 * E);
        glorot(p.add(pre + "w_out", ParamGroup::Encoder, E, E), E, E, rng);
        p.add(pre + "b_out", ParamGroup::Encoder, 1, E);
        p.add(pre + "ln1_gamma", ParamGroup::Encoder, 1, E).setOnes();
        p.add(pre + "ln1_beta", ParamGroup::Encoder, 1, E);
        glorot(p.add(pre + "w_ff1", ParamGroup::Encoder, E, F), E, F, rng);
        p.add(pre + "b_ff1", ParamGroup::Encoder, 1, F);
        glorot(p.add(pre + "w_ff2", ParamGroup::Encoder, F, E), F, E, rng);
        p.add(pre + "b_ff2", ParamGroup::Encoder, 1, E);
        p.add(pre + "ln2_gamma", ParamGroup::Encoder, 1, E).setOnes();
        p.add(pre + "ln2_beta", ParamGroup::Encoder, 1, E);
      }
      break;
    }
  }

  const auto D = static_cast<Index>(spec.encoding_dim());
  for (auto head : head_names(spec)) {
    glorot(p.add(std::string(head) + ".weight", ParamGroup::Head, D, 2), D, 2, rng);
    p.add(std::string(head) + ".bias", ParamGroup::Head, 1, 2);
  }
  return model;
}

void ClassProbabilities::append(const ClassProbabilities& other) {
  p1.insert(p1.end(), other.p1.begin(), other.p1.end());
  label.insert(label.end(), other.label.begin(), other.label.end());
}

void HeadOutputs::append(const HeadOutputs& other) {
  clean.append(other.clean);
  poisoned.append(other.poisoned);
  detector.append(other.detector);
}

ClassProbabilities probabilities_from_logits(const Matrix& logits) {
  ClassProbabilities out;
  out.p1.resize(static_cast<std::size_t>(logits.rows()));
  out.label.resize(out.p1.size());
  for (Index r = 0; r < logits.rows(); ++r) {
    const double diff = logits(r, 1) - logits(r, 0);
    const double p1 = diff >= 0 ? 1.0 / (1.0 + std::exp(-diff)) : std::exp(diff) / (1.0 + std::exp(diff));
    out.p1[static_cast<std::size_t>(r)] = p1;
    out.label[static_cast<std::size_t>(r)] = p1 >= 0.5 ? 1 : 0;
  }
  return out;
}

std::unique_ptr<EncoderTape> encode(const TrainedModel& model, const PaddedBatch& batch) {
  switch (model.spec.encoder) {
    case EncoderKind::Lstm: return encode_lstm(model.spec, model.params, batch);
    case EncoderKind::LstmAttention: return encode_lstm_att(model.spec, model.params, batch);
    case EncoderKind::Cnn: return encode_cnn(model.spec, model.params, batch);
    case EncoderKind::Transformer: return encode_transformer(model.spec, model.params, batch);
  }
  throw Error(ErrorKind::Spec, "unknown encoder");
}

void check_token_ids(const TrainedModel& model, const PaddedBatch& batch) {
  const auto V = static_cast<TokenId>(model.spec.vocab_size);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    if (batch.lengths[r] == 0) throw Error(ErrorKind::Length, "empty sequence in batch");
    for (TokenId t : batch.row(r)) {
      if (t < 1 || t >= V) {
        throw Error(ErrorKind::Vocabulary, "token id " + std::to_string(t) + " outside [1, " +
                                               std::to_string(V) + ")");
      }
    }
  }
}

ForwardPass forward_pass(const TrainedModel& model, const PaddedBatch& batch) {
  check_token_ids(model, batch);
  ForwardPass pass;
  pass.tape = encode(model, batch);
  const Matrix& enc = pass.tape->output();
  for (auto head : head_names(model.spec)) {
    const Matrix& w = model.params[std::string(head) + ".weight"];
    const Matrix& b = model.params[std::string(head) + ".bias"];
    Matrix logits = enc * w;
    logits.rowwise() += b.row(0);
    pass.logits.push_back(std::move(logits));
  }
  return pass;
}

void backward_pass(const TrainedModel& model, const ForwardPass& pass, std::span<const Matrix> d_logits,
                   Gradients& grads) {
  const auto names = head_names(model.spec);
  if (d_logits.size() != names.size()) throw Error(ErrorKind::Mode, "one logit gradient per head required");
  const Matrix& enc = pass.tape->output();
  Matrix d_enc = Matrix::Zero(enc.rows(), enc.cols());
  for (std::size_t h = 0; h < names.size(); ++h) {
    const std::string head(names[h]);
    const auto wi = model.params.index_of(head + ".weight");
    const auto bi = model.params.index_of(head + ".bias");
    grads[wi].noalias() += enc.transpose() * d_logits[h];
    grads[bi] += d_logits[h].colwise().sum();
    d_enc.noalias() += d_logits[h] * model.params.entry(wi).value.transpose();
  }
  pass.tape->backward(d_enc, grads);
}

ClassProbabilities forward(const TrainedModel& model, const PaddedBatch& batch) {
  if (model.spec.three_heads) return route_probabilities(forward_three_heads(model, batch));
  auto pass = forward_pass(model, batch);
  return probabilities_from_logits(pass.logits[0]);
}

HeadOutputs forward_three_heads(const TrainedModel& model, const PaddedBatch& batch) {
  if (!model.spec.three_heads) throw Error(ErrorKind::Mode, "model has a single head");
  auto pass = forward_pass(model, batch);
  return HeadOutputs{.clean = probabilities_from_logits(pass.logits[0]),
                     .poisoned = probabilities_from_logits(pass.logits[1]),
                     .detector = probabilities_from_logits(pass.logits[2])};
}

int route_prediction(int detector_label, int clean_label, int poisoned_label) {
  return detector_label == 0 ? clean_label : poisoned_label;
}

std::vector<int> route_prediction(const HeadOutputs& o) {
  std::vector<int> out(o.detector.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = route_prediction(o.detector.label[i], o.clean.label[i], o.poisoned.label[i]);
  }
  return out;
}

ClassProbabilities route_probabilities(const HeadOutputs& o) {
  ClassProbabilities out;
  out.p1.resize(o.detector.size());
  out.label.resize(o.detector.size());
  for (std::size_t i = 0; i < out.p1.size(); ++i) {
    const auto& src = o.detector.label[i] == 0 ? o.clean : o.poisoned;
    out.p1[i] = src.p1[i];
    out.label[i] = src.label[i];
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_batch(const SequenceDataset& ds, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw Error(ErrorKind::Config, "batch_size must be positive");
  std::vector<const TokenSequence*> ptrs;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t end = std::min(ds.size(), start + batch_size);
    ptrs.clear();
    std::size_t longest = 0;
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&ds.sequences[i]);
      longest = std::max(longest, ds.sequences[i].tokens.size());
    }
    fn(pad_batch(std::span<const TokenSequence* const>(ptrs), longest));
  }
}

}  // namespace

ClassProbabilities predict(const TrainedModel& model, const SequenceDataset& ds, std::size_t batch_size) {
  ClassProbabilities out;
  for_each_batch(ds, batch_size, [&](const PaddedBatch& b) { out.append(forward(model, b)); });
  return out;
}

HeadOutputs predict_heads(const TrainedModel& model, const SequenceDataset& ds, std::size_t batch_size) {
  HeadOutputs out;
  for_each_batch(ds, batch_size, [&](const PaddedBatch& b) { out.append(forward_three_heads(model, b)); });
  return out;
}

// ---- checkpoint archive ----

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'T', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)).data(), sizeof(T));
    return v;
  }

  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::Io, "truncated checkpoint");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const TrainedModel& model) {
  std::string out(kMagic, sizeof(kMagic));
  put(out, kVersion);
  const std::string spec = nlohmann::json(model.spec).dump();
  put(out, static_cast<std::uint64_t>(spec.size()));
  out += spec;
  put(out, static_cast<std::uint64_t>(model.params.size()));
  for (const auto& e : model.params) {
    put(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put(out, static_cast<std::uint8_t>(e.group));
    put(out, static_cast<std::uint64_t>(e.value.rows()));
    put(out, static_cast<std::uint64_t>(e.value.cols()));
    out.append(reinterpret_cast<const char*>(e.value.data()),
               static_cast<std::size_t>(e.value.size()) * sizeof(double));
  }
  return out;
}

TrainedModel deserialize_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw Error(ErrorKind::Io, "not a checkpoint (bad magic)");
  }
  if (in.get<std::uint32_t>() != kVersion) throw Error(ErrorKind::Io, "unsupported checkpoint version");
  const auto spec_len = in.get<std::uint64_t>();
  TrainedModel model;
  model.spec = nlohmann::json::parse(in.take(spec_len)).get<ModelSpec>();
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len));
    const auto group = static_cast<ParamGroup>(in.get<std::uint8_t>());
    const auto rows = static_cast<Index>(in.get<std::uint64_t>());
    const auto cols = static_cast<Index>(in.get<std::uint64_t>());
    Matrix& m = model.params.add(std::move(name), group, rows, cols);
    auto raw = in.take(static_cast<std::size_t>(rows * cols) * sizeof(double));
    std::memcpy(m.data(), raw.data(), raw.size());
  }
  if (!in.done()) throw Error(ErrorKind::Io, "trailing bytes in checkpoint");

  // The parameter tree must be exactly what the spec implies.
  const auto expected = init_model(model.spec, 0);
  if (expected.params.size() != model.params.size()) throw Error(ErrorKind::Spec, "checkpoint/spec mismatch");
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& a = expected.params.entry(i);
    const auto& b = model.params.entry(i);
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      throw Error(ErrorKind::Spec, "checkpoint parameter '" + b.name + "' does not match spec");
    }
  }
  return model;
}

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  const auto bytes = serialize_checkpoint(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace seqtrojan
