#include "airlab/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace airlab {

using json = nlohmann::json;

void DecoderConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("config: layers must be >= 1");
  if (heads < 1 || width < 1 || width % heads != 0) {
    throw std::invalid_argument("config: width " + std::to_string(width) +
                                " must be a positive multiple of heads " + std::to_string(heads));
  }
  if ((width / heads) % 2 != 0) {
    throw std::invalid_argument("config: head dim must be even for rotary encoding");
  }
  if (levels < 1) throw std::invalid_argument("config: levels must be >= 1");
  if (vocab < 1) throw std::invalid_argument("config: vocab must be >= 1");
  if (max_seq < 2) throw std::invalid_argument("config: max_seq must be >= 2");
}

std::string config_to_json_string(const DecoderConfig& cfg) {
  json j;
  j["layers"] = cfg.layers;
  j["width"] = cfg.width;
  j["heads"] = cfg.heads;
  j["vocab"] = cfg.vocab;
  j["levels"] = cfg.levels;
  j["max_seq"] = cfg.max_seq;
  j["mechanism"] = mechanism_name(cfg.mechanism);
  j["ih_init_std"] = cfg.ih_init_std;
  return j.dump();
}

DecoderConfig config_from_json_string(const std::string& text) {
  json j = json::parse(text);
  DecoderConfig cfg;
  cfg.layers = j.at("layers").get<int>();
  cfg.width = j.at("width").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.vocab = j.at("vocab").get<int>();
  cfg.levels = j.at("levels").get<int>();
  cfg.max_seq = j.at("max_seq").get<int>();
  cfg.mechanism = mechanism_from_name(j.at("mechanism").get<std::string>());
  cfg.ih_init_std = j.at("ih_init_std").get<double>();
  cfg.validate();
  return cfg;
}

int64_t count_ih_params(const DecoderConfig& cfg) {
  switch (cfg.mechanism) {
    case Mechanism::Air:
      return static_cast<int64_t>(cfg.layers + 1) * cfg.levels * cfg.width;
    case Mechanism::Ise:
      return static_cast<int64_t>(cfg.levels) * cfg.width;
    default:
      return 0;
  }
}

template <typename T>
std::vector<TensorT<T>> init_ih_tables(const DecoderConfig& cfg, Rng& rng) {
  const int table_count = cfg.mechanism == Mechanism::Air   ? cfg.layers + 1
                          : cfg.mechanism == Mechanism::Ise ? 1
                                                            : 0;
  if (table_count > 0 && !(cfg.ih_init_std > 0.0)) {
    throw std::invalid_argument("init_ih_tables: ih_init_std must be > 0, got " +
                                std::to_string(cfg.ih_init_std));
  }
  std::vector<TensorT<T>> tables;
  tables.reserve(static_cast<size_t>(table_count));
  for (int i = 0; i < table_count; ++i) {
    tables.push_back(
        TensorT<T>::randn({cfg.levels, cfg.width}, rng, cfg.ih_init_std, /*requires_grad=*/true));
  }
  return tables;
}

template <typename T>
DecoderModelT<T> init_decoder(const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kInitStd = 0.02;
  DecoderModelT<T> m;
  m.config = cfg;
  m.token_embedding = TensorT<T>::randn({cfg.vocab, cfg.width}, rng, kInitStd, true);
  const int hidden = 4 * cfg.width;
  for (int l = 0; l < cfg.layers; ++l) {
    DecoderBlockT<T> b;
    b.attn_norm_w = TensorT<T>::from_data({cfg.width}, std::vector<T>(cfg.width, T(1)), true);
    b.wq = TensorT<T>::randn({cfg.width, cfg.width}, rng, kInitStd, true);
    b.wk = TensorT<T>::randn({cfg.width, cfg.width}, rng, kInitStd, true);
    b.wv = TensorT<T>::randn({cfg.width, cfg.width}, rng, kInitStd, true);
    b.wo = TensorT<T>::randn({cfg.width, cfg.width}, rng, kInitStd, true);
    b.mlp_norm_w = TensorT<T>::from_data({cfg.width}, std::vector<T>(cfg.width, T(1)), true);
    b.w1 = TensorT<T>::randn({cfg.width, hidden}, rng, kInitStd, true);
    b.w2 = TensorT<T>::randn({hidden, cfg.width}, rng, kInitStd, true);
    m.blocks.push_back(std::move(b));
  }
  m.final_norm_w = TensorT<T>::from_data({cfg.width}, std::vector<T>(cfg.width, T(1)), true);
  m.unembedding = TensorT<T>::randn({cfg.width, cfg.vocab}, rng, kInitStd, true);
  m.ih_tables = init_ih_tables<T>(cfg, rng);
  if (cfg.mechanism == Mechanism::Delimiters) {
    // The two delimiter rows are the mechanism's only trainable signal; give
    // them the same init scale the table mechanisms use.
    if (!(cfg.ih_init_std > 0.0)) {
      throw std::invalid_argument("init_decoder: ih_init_std must be > 0 for delimiters");
    }
    for (int id : {kTokInst, kTokInpt}) {
      if (id < cfg.vocab) {
        for (int c = 0; c < cfg.width; ++c) {
          (*m.token_embedding.data)[static_cast<size_t>(id) * cfg.width + c] =
              static_cast<T>(rng.normal() * cfg.ih_init_std);
        }
      }
    }
  }
  return m;
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> DecoderModelT<T>::named_params() const {
  std::vector<std::pair<std::string, TensorT<T>>> out;
  out.emplace_back("token_embedding", token_embedding);
  for (size_t l = 0; l < blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    out.emplace_back(p + "attn_norm.weight", blocks[l].attn_norm_w);
    out.emplace_back(p + "attn.wq", blocks[l].wq);
    out.emplace_back(p + "attn.wk", blocks[l].wk);
    out.emplace_back(p + "attn.wv", blocks[l].wv);
    out.emplace_back(p + "attn.wo", blocks[l].wo);
    out.emplace_back(p + "mlp_norm.weight", blocks[l].mlp_norm_w);
    out.emplace_back(p + "mlp.w1", blocks[l].w1);
    out.emplace_back(p + "mlp.w2", blocks[l].w2);
  }
  out.emplace_back("final_norm.weight", final_norm_w);
  out.emplace_back("unembedding", unembedding);
  for (size_t i = 0; i < ih_tables.size(); ++i) {
    out.emplace_back("ih.tables." + std::to_string(i), ih_tables[i]);
  }
  return out;
}

template <typename T>
int64_t DecoderModelT<T>::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.numel();
  return n;
}

template <typename T>
void DecoderModelT<T>::zero_grads() {
  for (auto& [name, t] : named_params()) {
    TensorT<T> h = t;
    h.zero_grad();
  }
}

template <typename T>
TensorT<T> air_augment(const TensorT<T>& x, int k, const TensorT<T>& table) {
  if (x.ndim() != 1 || table.ndim() != 2 || table.dim(1) != x.dim(0)) {
    throw std::invalid_argument("air_augment: shape mismatch " + shape_str(x.shape) + " vs " +
                                shape_str(table.shape));
  }
  if (k < 0 || k >= table.dim(0)) {
    throw std::out_of_range("air_augment: level " + std::to_string(k) + " out of range [0," +
                            std::to_string(table.dim(0)) + ")");
  }
  const int d = x.dim(0);
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  for (int c = 0; c < d; ++c) {
    out.ptr()[c] = x.ptr()[c] + table.ptr()[static_cast<size_t>(k) * d + c];
  }
  detail::attach<T>(out, {x, table}, [k, d](const TensorT<T>& o) {
    auto& px = o.node->parents[0];
    auto& pt = o.node->parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (int c = 0; c < d; ++c) (*px.grad)[c] += (*o.grad)[c];
    }
    if (pt.requires_grad) {
      pt.ensure_grad();
      T* dst = pt.grad->data() + static_cast<size_t>(k) * d;
      for (int c = 0; c < d; ++c) dst[c] += (*o.grad)[c];
    }
  });
  return out;
}

namespace {

template <typename T>
void check_levels(const DecoderConfig& cfg, const std::vector<int>& levels, int seq_len) {
  if (seq_len < 1) throw std::invalid_argument("forward: empty sequence");
  if (seq_len > cfg.max_seq) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(seq_len) +
                                " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  if (static_cast<int>(levels.size()) != seq_len) {
    throw std::invalid_argument("forward: " + std::to_string(levels.size()) + " levels for " +
                                std::to_string(seq_len) + " tokens");
  }
  for (int lvl : levels) {
    if (lvl < 0 || lvl >= cfg.levels) {
      throw std::out_of_range("forward: level " + std::to_string(lvl) + " out of range [0," +
                              std::to_string(cfg.levels) + ")");
    }
  }
}

}  // namespace

template <typename T>
TensorT<T> forward_from_embeddings(const DecoderModelT<T>& model, const TensorT<T>& x0,
                                   const std::vector<int>& levels) {
  const DecoderConfig& cfg = model.config;
  detail::require_2d(x0, "forward");
  check_levels<T>(cfg, levels, x0.dim(0));
  if (x0.dim(1) != cfg.width) {
    throw std::invalid_argument("forward: embedding width " + std::to_string(x0.dim(1)) +
                                " does not match model width " + std::to_string(cfg.width));
  }
  const int hd = cfg.width / cfg.heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));

  TensorT<T> x = x0;
  if (cfg.mechanism == Mechanism::Ise) {
    x = add(x, embedding_rows(model.ih_tables[0], levels));
  }
  for (int l = 0; l < cfg.layers; ++l) {
    if (cfg.mechanism == Mechanism::Air) {
      x = add(x, embedding_rows(model.ih_tables[static_cast<size_t>(l)], levels));
    }
    const DecoderBlockT<T>& b = model.blocks[static_cast<size_t>(l)];
    TensorT<T> h = rmsnorm_rows(x, b.attn_norm_w);
    TensorT<T> q = matmul(h, b.wq);
    TensorT<T> k = matmul(h, b.wk);
    TensorT<T> v = matmul(h, b.wv);
    std::vector<TensorT<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg.heads));
    for (int hi = 0; hi < cfg.heads; ++hi) {
      TensorT<T> qh = rope_rows(slice_cols(q, hi * hd, hd));
      TensorT<T> kh = rope_rows(slice_cols(k, hi * hd, hd));
      TensorT<T> vh = slice_cols(v, hi * hd, hd);
      TensorT<T> scores = scale(matmul_nt(qh, kh), attn_scale);
      TensorT<T> attn = softmax_rows(causal_mask_fill(scores));
      head_outs.push_back(matmul(attn, vh));
    }
    x = add(x, matmul(concat_cols(head_outs), b.wo));
    TensorT<T> m = rmsnorm_rows(x, b.mlp_norm_w);
    x = add(x, matmul(silu(matmul(m, b.w1)), b.w2));
  }
  if (cfg.mechanism == Mechanism::Air) {
    x = add(x, embedding_rows(model.ih_tables[static_cast<size_t>(cfg.layers)], levels));
  }
  x = rmsnorm_rows(x, model.final_norm_w);
  return matmul(x, model.unembedding);
}

template <typename T>
TensorT<T> forward_logits(const DecoderModelT<T>& model, const TaggedSequence& seq) {
  check_levels<T>(model.config, seq.levels, seq.size());
  TensorT<T> x0 = embedding_rows(model.token_embedding, seq.token_ids);
  return forward_from_embeddings(model, x0, seq.levels);
}

template <typename T>
TensorT<T> response_target_loss(const TensorT<T>& logits, const TaggedSequence& seq,
                                Reduction reduction) {
  const int t_len = seq.size();
  std::vector<int> targets(static_cast<size_t>(t_len), 0);
  std::vector<uint8_t> mask(static_cast<size_t>(t_len), 0);
  for (int i = 0; i + 1 < t_len; ++i) {
    targets[static_cast<size_t>(i)] = seq.token_ids[static_cast<size_t>(i) + 1];
    mask[static_cast<size_t>(i)] = seq.response_mask[static_cast<size_t>(i) + 1];
  }
  return cross_entropy_rows(logits, targets, mask, reduction);
}

template <typename T>
std::vector<std::vector<T>> embedding_gradient(const DecoderModelT<T>& model,
                                               const TaggedSequence& seq,
                                               const std::vector<int>& positions) {
  const int t_len = seq.size();
  for (int p : positions) {
    if (p < 0 || p >= t_len) {
      throw std::out_of_range("embedding_gradient: position " + std::to_string(p) +
                              " out of range [0," + std::to_string(t_len) + ")");
    }
  }
  bool any_target = false;
  for (int i = 1; i < t_len; ++i) any_target = any_target || seq.response_mask[static_cast<size_t>(i)];
  if (!any_target) {
    throw std::invalid_argument("embedding_gradient: sequence has no response targets");
  }
  // Leaf input representation: lookup the values without recording, then
  // differentiate the rest of the network with respect to it.
  TensorT<T> x0;
  {
    NoGradGuard ng;
    x0 = embedding_rows(model.token_embedding, seq.token_ids);
  }
  x0 = x0.clone(/*requires_grad=*/true);
  TensorT<T> logits = forward_from_embeddings(model, x0, seq.levels);
  TensorT<T> loss = response_target_loss(logits, seq, Reduction::Sum);
  backward(loss);

  // Chain through the one-hot relaxation: d loss / d onehot_v = E_v . d loss / d x0_p.
  const int d = model.config.width;
  const int v = model.config.vocab;
  std::vector<std::vector<T>> out;
  out.reserve(positions.size());
  auto emb = detail::as_matrix(model.token_embedding);
  for (int p : positions) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> g(
        x0.grad->data() + static_cast<size_t>(p) * d, d);
    Eigen::Matrix<T, 1, Eigen::Dynamic> row = g * emb.transpose();
    out.emplace_back(row.data(), row.data() + v);
  }
  return out;
}

template <typename T>
std::vector<int> greedy_decode(const DecoderModelT<T>& model, const TaggedSequence& prompt,
                               int max_new_tokens) {
  if (max_new_tokens < 0) throw std::invalid_argument("greedy_decode: negative token budget");
  NoGradGuard ng;
  TaggedSequence seq;
  seq.token_ids = prompt.token_ids;
  seq.levels = prompt.levels;
  std::vector<int> generated;
  const int v = model.config.vocab;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (seq.size() >= model.config.max_seq) break;
    TensorT<T> logits = forward_from_embeddings(
        model, embedding_rows(model.token_embedding, seq.token_ids), seq.levels);
    const T* last = logits.ptr() + static_cast<size_t>(seq.size() - 1) * v;
    int best = 0;
    for (int j = 1; j < v; ++j) {
      if (last[j] > last[best]) best = j;
    }
    generated.push_back(best);
    seq.token_ids.push_back(best);
    seq.levels.push_back(kLevelResponse);
    if (best == kTokEos) break;
  }
  return generated;
}

template <typename T>
std::string decode_response(const DecoderModelT<T>& model, const std::string& instruction,
                            const std::optional<std::string>& data, int max_new_tokens) {
  const TaggedSequence prompt =
      render_chat_template(instruction, data, std::nullopt, model.config.mechanism);
  std::string text;
  for (int id : greedy_decode(model, prompt, max_new_tokens)) {
    if (id < 256) text.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  const std::string header = kRespHeader;
  if (text.compare(0, header.size(), header) == 0) text.erase(0, header.size());
  return text;
}

// ---------------------------------------------------------------------------
// Checkpoints: u64 little-endian header length, JSON header (precision,
// config, tensor names + shapes in serialization order), then raw
// little-endian tensor payloads in that order.
// ---------------------------------------------------------------------------

template <typename T>
static const char* precision_tag() {
  if constexpr (std::is_same_v<T, float>) {
    return "f32";
  } else {
    static_assert(std::is_same_v<T, double>);
    return "f64";
  }
}

template <typename T>
void save_checkpoint(const DecoderModelT<T>& model, const std::string& path,
                     const std::string& run_config_json) {
  json header;
  header["format_version"] = 1;
  header["precision"] = precision_tag<T>();
  header["config"] = json::parse(config_to_json_string(model.config));
  if (!run_config_json.empty()) header["run_config"] = json::parse(run_config_json);
  json tensors = json::array();
  const auto params = model.named_params();
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"shape", t.shape}});
  }
  header["tensors"] = tensors;
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  const uint64_t header_len = header_text.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : params) {
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

template <typename T>
DecoderModelT<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || header_len == 0 || header_len > (1u << 20)) {
    throw std::runtime_error("checkpoint: corrupt header length in '" + path + "'");
  }
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("checkpoint: truncated header in '" + path + "'");
  json header = json::parse(header_text);
  const std::string precision = header.at("precision").get<std::string>();
  if (precision != precision_tag<T>()) {
    throw std::runtime_error("checkpoint: precision " + precision + " does not match requested " +
                             precision_tag<T>());
  }
  const DecoderConfig cfg = config_from_json_string(header.at("config").dump());

  // Build an empty model with the right shapes, then fill in declared order.
  Rng rng(0);
  DecoderModelT<T> model = init_decoder<T>(cfg, rng);
  auto params = model.named_params();
  const json& tensors = header.at("tensors");
  if (tensors.size() != params.size()) {
    throw std::runtime_error("checkpoint: " + std::to_string(tensors.size()) + " tensors for " +
                             std::to_string(params.size()) + " parameters");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string name = tensors[i].at("name").get<std::string>();
    const std::vector<int> shape = tensors[i].at("shape").get<std::vector<int>>();
    if (name != params[i].first || shape != params[i].second.shape) {
      throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " is " + name + " " +
                               shape_str(shape) + ", expected " + params[i].first + " " +
                               shape_str(params[i].second.shape));
    }
    TensorT<T>& t = params[i].second;
    in.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
    if (!in) throw std::runtime_error("checkpoint: truncated payload at " + name);
  }
  return model;
}

template struct DecoderModelT<float>;
template struct DecoderModelT<double>;
template std::vector<TensorT<float>> init_ih_tables<float>(const DecoderConfig&, Rng&);
template std::vector<TensorT<double>> init_ih_tables<double>(const DecoderConfig&, Rng&);
template DecoderModelT<float> init_decoder<float>(const DecoderConfig&, Rng&);
template DecoderModelT<double> init_decoder<double>(const DecoderConfig&, Rng&);
template TensorT<float> air_augment<float>(const TensorT<float>&, int, const TensorT<float>&);
template TensorT<double> air_augment<double>(const TensorT<double>&, int, const TensorT<double>&);
template TensorT<float> forward_from_embeddings<float>(const DecoderModelT<float>&,
                                                       const TensorT<float>&,
                                                       const std::vector<int>&);
template TensorT<double> forward_from_embeddings<double>(const DecoderModelT<double>&,
                                                         const TensorT<double>&,
                                                         const std::vector<int>&);
template TensorT<float> forward_logits<float>(const DecoderModelT<float>&, const TaggedSequence&);
template TensorT<double> forward_logits<double>(const DecoderModelT<double>&, const TaggedSequence&);
template TensorT<float> response_target_loss<float>(const TensorT<float>&, const TaggedSequence&,
                                                    Reduction);
template TensorT<double> response_target_loss<double>(const TensorT<double>&, const TaggedSequence&,
                                                      Reduction);
template std::vector<std::vector<float>> embedding_gradient<float>(const DecoderModelT<float>&,
                                                                   const TaggedSequence&,
                                                                   const std::vector<int>&);
template std::vector<std::vector<double>> embedding_gradient<double>(const DecoderModelT<double>&,
                                                                     const TaggedSequence&,
                                                                     const std::vector<int>&);
template std::vector<int> greedy_decode<float>(const DecoderModelT<float>&, const TaggedSequence&,
                                               int);
template std::vector<int> greedy_decode<double>(const DecoderModelT<double>&, const TaggedSequence&,
                                                int);
template std::string decode_response<float>(const DecoderModelT<float>&, const std::string&,
                                            const std::optional<std::string>&, int);
template std::string decode_response<double>(const DecoderModelT<double>&, const std::string&,
                                             const std::optional<std::string>&, int);
template void save_checkpoint<float>(const DecoderModelT<float>&, const std::string&,
                                     const std::string&);
template void save_checkpoint<double>(const DecoderModelT<double>&, const std::string&,
                                      const std::string&);
template DecoderModelT<float> load_checkpoint<float>(const std::string&);
template DecoderModelT<double> load_checkpoint<double>(const std::string&);

}  // namespace airlab
