#include "seqtrojan/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "seqtrojan/error.hpp"
#include "seqtrojan/random.hpp"

namespace seqtrojan {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == name) return i;
  }
  throw Error(ErrorKind::Schema, "missing column '" + name + "'");
}

}  // namespace

std::size_t SequenceDataset::count_label(int label) const {
  return static_cast<std::size_t>(std::count_if(sequences.begin(), sequences.end(),
                                                [&](const auto& s) { return s.label == label; }));
}

std::size_t SequenceDataset::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.tokens.size();
  return n;
}

Vocabulary::Vocabulary(std::vector<std::pair<TokenId, std::uint64_t>> ordered) {
  token_of_.reserve(ordered.size() + 1);
  freq_.reserve(ordered.size() + 1);
  for (auto [raw, f] : ordered) {
    auto id = static_cast<TokenId>(token_of_.size());
    if (!id_of_.emplace(raw, id).second) {
      throw Error(ErrorKind::Vocabulary, "duplicate token " + std::to_string(raw));
    }
    token_of_.push_back(raw);
    freq_.push_back(f);
  }
}

TokenId Vocabulary::id_of(TokenId raw) const {
  auto it = id_of_.find(raw);
  if (it == id_of_.end()) throw Error(ErrorKind::Vocabulary, "unknown token " + std::to_string(raw));
  return it->second;
}

TokenId Vocabulary::token_of(TokenId id) const {
  if (id <= kPadId || static_cast<std::size_t>(id) >= token_of_.size()) {
    throw Error(ErrorKind::Vocabulary, "id out of range " + std::to_string(id));
  }
  return token_of_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::freq(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= freq_.size()) {
    throw Error(ErrorKind::Vocabulary, "id out of range " + std::to_string(id));
  }
  return freq_[static_cast<std::size_t>(id)];
}

SequenceDataset Vocabulary::encode(const SequenceDataset& raw) const {
  SequenceDataset out{.sequences = {}, .max_len = raw.max_len, .name = raw.name};
  out.sequences.reserve(raw.size());
  for (const auto& s : raw.sequences) {
    TokenSequence e{.client_id = s.client_id, .tokens = {}, .label = s.label, .poisoned = s.poisoned};
    e.tokens.reserve(s.tokens.size());
    for (TokenId t : s.tokens) {
      if (auto it = id_of_.find(t); it != id_of_.end()) e.tokens.push_back(it->second);
    }
    if (!e.tokens.empty()) out.sequences.push_back(std::move(e));
  }
  return out;
}

void SyntheticConfig::validate(std::size_t min_len) const {
  if (n_sequences < 2) throw Error(ErrorKind::Config, "n_sequences must be >= 2");
  if (vocab_size < 22) throw Error(ErrorKind::Config, "vocab_size must be >= 22");
  if (len_min < min_len) throw Error(ErrorKind::Config, "len_min below min_len");
  if (len_max < len_min) throw Error(ErrorKind::Config, "len_max < len_min");
  if (!(class_signal >= 0.0 && class_signal < 1.0)) {
    throw Error(ErrorKind::Config, "class_signal must lie in [0, 1)");
  }
  if (rare_count_a < 1 || rare_count_b < 1) throw Error(ErrorKind::Config, "rare counts must be >= 1");
  if (rare_count_a > n_sequences || rare_count_b > n_sequences) {
    throw Error(ErrorKind::Config, "rare counts exceed n_sequences");
  }
}

SyntheticLayout synthetic_layout(std::size_t vocab_size) {
  const auto regular = static_cast<TokenId>(vocab_size) - 3;  // ids 1..regular
  const TokenId half = regular / 2;
  return SyntheticLayout{
      .block_begin = {1, static_cast<TokenId>(1 + half)},
      .block_end = {static_cast<TokenId>(1 + half), static_cast<TokenId>(1 + 2 * half)},
      .rare_a = static_cast<TokenId>(regular + 1),
      .rare_b = static_cast<TokenId>(regular + 2),
  };
}

SequenceDataset load_long_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Schema, "missing header row in " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  const std::size_t c_client = column_index(header, schema.client_column);
  const std::size_t c_time = column_index(header, schema.time_column);
  const std::size_t c_token = column_index(header, schema.token_column);
  const std::size_t c_target = column_index(header, schema.target_column);
  const std::size_t needed = std::max({c_client, c_time, c_token, c_target}) + 1;

  struct Event {
    std::string time;
    double time_value;
    TokenId token;
  };
  struct Client {
    std::string id;
    int target;
    std::vector<Event> events;
  };
  std::vector<Client> clients;
  std::unordered_map<std::string, std::size_t> index;
  bool numeric_time = true;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() < needed) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": too few fields");
    }
    TokenId token{};
    if (!parse_number(fields[c_token], token)) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": non-integer token code '" +
                                        fields[c_token] + "'");
    }
    int target{};
    if (!parse_number(fields[c_target], target) || (target != 0 && target != 1)) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": target must be 0 or 1");
    }
    double tv = 0.0;
    std::string ts(trim(fields[c_time]));
    if (numeric_time && !parse_number(std::string_view(ts), tv)) numeric_time = false;

    std::string cid(trim(fields[c_client]));
    auto [it, inserted] = index.emplace(cid, clients.size());
    if (inserted) clients.push_back(Client{.id = cid, .target = target, .events = {}});
    Client& client = clients[it->second];
    if (client.target != target) {
      throw Error(ErrorKind::Integrity, "client '" + cid + "' has conflicting targets (line " +
                                            std::to_string(line_no) + ")");
    }
    client.events.push_back(Event{.time = std::move(ts), .time_value = tv, .token = token});
  }

  SequenceDataset ds{.sequences = {}, .max_len = 0, .name = path.stem().string()};
  ds.sequences.reserve(clients.size());
  for (auto& c : clients) {
    if (numeric_time) {
      std::stable_sort(c.events.begin(), c.events.end(),
                       [](const Event& a, const Event& b) { return a.time_value < b.time_value; });
    } else {
      std::stable_sort(c.events.begin(), c.events.end(),
                       [](const Event& a, const Event& b) { return a.time < b.time; });
    }
    TokenSequence s{.client_id = c.id, .tokens = {}, .label = c.target, .poisoned = false};
    s.tokens.reserve(c.events.size());
    for (const auto& e : c.events) s.tokens.push_back(e.token);
    ds.max_len = std::max(ds.max_len, s.tokens.size());
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

SequenceDataset preprocess(const SequenceDataset& ds, std::size_t max_len, std::size_t min_len,
                           std::uint64_t seed) {
  if (min_len < 1 || max_len < min_len) throw Error(ErrorKind::Config, "require max_len >= min_len >= 1");

  std::vector<TokenSequence> kept;
  kept.reserve(ds.size());
  for (const auto& s : ds.sequences) {
    if (s.tokens.size() < min_len) continue;
    TokenSequence t = s;
    if (t.tokens.size() > max_len) {
      t.tokens.erase(t.tokens.begin(), t.tokens.end() - static_cast<std::ptrdiff_t>(max_len));
    }
    kept.push_back(std::move(t));
  }

  std::vector<std::size_t> by_label[2];
  for (std::size_t i = 0; i < kept.size(); ++i) by_label[kept[i].label == 1 ? 1 : 0].push_back(i);
  const int majority = by_label[1].size() > by_label[0].size() ? 1 : 0;
  const std::size_t target = by_label[1 - majority].size();

  std::vector<bool> keep(kept.size(), true);
  auto& major = by_label[majority];
  if (major.size() > target) {
    Rng rng(seed);
    auto chosen = rng.sample_without_replacement(major.size(), target);
    std::vector<bool> stay(major.size(), false);
    for (auto c : chosen) stay[c] = true;
    for (std::size_t j = 0; j < major.size(); ++j) {
      if (!stay[j]) keep[major[j]] = false;
    }
  }

  SequenceDataset out{.sequences = {}, .max_len = max_len, .name = ds.name};
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (keep[i]) out.sequences.push_back(std::move(kept[i]));
  }
  if (out.empty()) throw Error(ErrorKind::EmptyDataset, "no sequences survive preprocessing");
  return out;
}

Vocabulary build_vocabulary(const SequenceDataset& ds) {
  std::map<TokenId, std::uint64_t> counts;
  for (const auto& s : ds.sequences) {
    for (TokenId t : s.tokens) ++counts[t];
  }
  std::vector<std::pair<TokenId, std::uint64_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return Vocabulary(std::move(ordered));
}

std::pair<SequenceDataset, SequenceDataset> split(const SequenceDataset& ds, double test_fraction,
                                                  std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorKind::Config, "test_fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  std::vector<bool> is_test(ds.size(), false);
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.sequences[i].label == label) members.push_back(i);
    }
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(members.size())));
    rng.shuffle(std::span(members));
    for (std::size_t j = 0; j < n_test; ++j) is_test[members[j]] = true;
  }
  SequenceDataset train{.sequences = {}, .max_len = ds.max_len, .name = ds.name + "/train"};
  SequenceDataset test{.sequences = {}, .max_len = ds.max_len, .name = ds.name + "/test"};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    (is_test[i] ? test : train).sequences.push_back(ds.sequences[i]);
  }
  return {std::move(train), std::move(test)};
}

SequenceDataset generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto layout = synthetic_layout(cfg.vocab_size);
  const TokenId n_regular = layout.rare_a - 1;

  std::vector<int> labels(cfg.n_sequences);
  for (std::size_t i = 0; i < cfg.n_sequences; ++i) labels[i] = i < cfg.n_sequences / 2 ? 0 : 1;
  rng.shuffle(std::span(labels));

  SequenceDataset ds{.sequences = {}, .max_len = cfg.len_max, .name = "synthetic"};
  ds.sequences.reserve(cfg.n_sequences);
  for (std::size_t i = 0; i < cfg.n_sequences; ++i) {
    const int c = labels[i];
    const auto len = static_cast<std::size_t>(
        rng.between(static_cast<std::int64_t>(cfg.len_min), static_cast<std::int64_t>(cfg.len_max)));
    TokenSequence s{.client_id = "syn-" + std::to_string(i), .tokens = {}, .label = c, .poisoned = false};
    s.tokens.reserve(len);
    const auto block_size = static_cast<std::uint64_t>(layout.block_end[c] - layout.block_begin[c]);
    for (std::size_t t = 0; t < len; ++t) {
      if (rng.uniform() < cfg.class_signal) {
        s.tokens.push_back(layout.block_begin[c] + static_cast<TokenId>(rng.below(block_size)));
      } else {
        s.tokens.push_back(1 + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(n_regular))));
      }
    }
    ds.sequences.push_back(std::move(s));
  }

  // Plant the rare tokens by overwriting one position in distinct sequences.
  for (auto [token, count] : {std::pair{layout.rare_a, cfg.rare_count_a},
                              std::pair{layout.rare_b, cfg.rare_count_b}}) {
    for (auto idx : rng.sample_without_replacement(cfg.n_sequences, count)) {
      auto& tokens = ds.sequences[idx].tokens;
      tokens[rng.below(tokens.size())] = token;
    }
  }
  return ds;
}

PaddedBatch pad_batch(std::span<const TokenSequence* const> batch, std::size_t max_len) {
  PaddedBatch out;
  out.rows = batch.size();
  out.cols = max_len;
  out.ids.assign(out.rows * out.cols, kPadId);
  out.lengths.resize(out.rows);
  for (std::size_t r = 0; r < out.rows; ++r) {
    const auto& tokens = batch[r]->tokens;
    if (tokens.size() > max_len) {
      throw Error(ErrorKind::Length, "sequence of length " + std::to_string(tokens.size()) +
                                         " exceeds max_len " + std::to_string(max_len));
    }
    std::copy(tokens.begin(), tokens.end(), out.ids.begin() + static_cast<std::ptrdiff_t>(r * out.cols));
    out.lengths[r] = tokens.size();
  }
  return out;
}

PaddedBatch pad_batch(std::span<const TokenSequence> batch, std::size_t max_len) {
  std::vector<const TokenSequence*> ptrs;
  ptrs.reserve(batch.size());
  for (const auto& s : batch) ptrs.push_back(&s);
  return pad_batch(std::span<const TokenSequence* const>(ptrs), max_len);
}

void save_records(const SequenceDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& s : ds.sequences) {
    std::string tokens;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) tokens.push_back(' ');
      tokens += std::to_string(s.tokens[i]);
    }
    nlohmann::ordered_json rec;
    rec["client_id"] = s.client_id;
    rec["label"] = s.label;
    rec["tokens"] = tokens;
    if (s.poisoned) rec["poisoned"] = true;
    out << rec.dump() << '\n';
  }
}

SequenceDataset load_records(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  SequenceDataset ds{.sequences = {}, .max_len = 0, .name = name.empty() ? path.stem().string() : name};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      TokenSequence s;
      s.client_id = rec.at("client_id").get<std::string>();
      s.label = rec.at("label").get<int>();
      s.poisoned = rec.value("poisoned", false);
      std::istringstream toks(rec.at("tokens").get<std::string>());
      TokenId t{};
      while (toks >> t) s.tokens.push_back(t);
      ds.max_len = std::max(ds.max_len, s.tokens.size());
      ds.sequences.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, "record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

}  // namespace seqtrojan
