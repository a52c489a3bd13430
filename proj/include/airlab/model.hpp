#ifndef AIRLAB_MODEL_HPP_
#define AIRLAB_MODEL_HPP_

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "airlab/hierarchy.hpp"
#include "airlab/rng.hpp"
#include "airlab/tensor.hpp"

namespace airlab {

struct DecoderConfig {
  int layers = 4;
  int width = 64;
  int heads = 4;
  int vocab = kVocabSize;
  int levels = kNumLevels;
  int max_seq = 256;
  Mechanism mechanism = Mechanism::None;
  double ih_init_std = 0.02;

  void validate() const;
};

std::string config_to_json_string(const DecoderConfig& cfg);
DecoderConfig config_from_json_string(const std::string& text);

// Pre-norm decoder block: rms-normed rotary attention and rms-normed
// SiLU MLP, both residual, no biases.
template <typename T>
struct DecoderBlockT {
  TensorT<T> attn_norm_w;          // [d]
  TensorT<T> wq, wk, wv, wo;       // [d,d]
  TensorT<T> mlp_norm_w;           // [d]
  TensorT<T> w1;                   // [d,4d]
  TensorT<T> w2;                   // [4d,d]
};

template <typename T>
struct DecoderModelT {
  DecoderConfig config;
  TensorT<T> token_embedding;      // [V,d]
  std::vector<DecoderBlockT<T>> blocks;
  TensorT<T> final_norm_w;         // [d]
  TensorT<T> unembedding;          // [d,V]
  // Privilege tables: L+1 K-by-d matrices for the per-layer mechanism, a
  // single one for the input-only mechanism, empty otherwise.
  std::vector<TensorT<T>> ih_tables;

  // Handles share storage with the model, so mutating a returned tensor's
  // data or grad mutates the model. Order is stable across runs and is the
  // checkpoint serialization order.
  std::vector<std::pair<std::string, TensorT<T>>> named_params() const;
  int64_t param_count() const;
  void zero_grads();
};

using DecoderModel = DecoderModelT<float>;

// Extra trainable parameters a mechanism adds over the plain decoder.
int64_t count_ih_params(const DecoderConfig& cfg);

template <typename T>
std::vector<TensorT<T>> init_ih_tables(const DecoderConfig& cfg, Rng& rng);

template <typename T>
DecoderModelT<T> init_decoder(const DecoderConfig& cfg, Rng& rng);

// x'_i = x_i + table[k]: the per-token augmentation applied at every
// injection site.
template <typename T>
TensorT<T> air_augment(const TensorT<T>& x, int k, const TensorT<T>& table);

// Full forward from token ids. logits: [length, V].
template <typename T>
TensorT<T> forward_logits(const DecoderModelT<T>& model, const TaggedSequence& seq);

// Forward from a caller-supplied [length, d] embedding matrix (already
// including token embeddings but not privilege augmentation). Exposed so
// attack code and tests can differentiate with respect to the input
// representation.
template <typename T>
TensorT<T> forward_from_embeddings(const DecoderModelT<T>& model, const TensorT<T>& x0,
                                   const std::vector<int>& levels);

// Next-token cross-entropy restricted to response positions: logits row i
// is paired with token i+1 and contributes iff that token is
// response-masked. Shared by the training loss (mean) and the attack loss
// (sum).
template <typename T>
TensorT<T> response_target_loss(const TensorT<T>& logits, const TaggedSequence& seq,
                                Reduction reduction);

// Gradient of the summed next-token loss over response positions with
// respect to the one-hot relaxation of the token at each selected position.
// Returns one V-dim row per position.
template <typename T>
std::vector<std::vector<T>> embedding_gradient(const DecoderModelT<T>& model,
                                               const TaggedSequence& seq,
                                               const std::vector<int>& positions);

// Greedy next-token decoding primed at the end of the prompt; appended
// tokens carry the response level. Returns the generated ids including the
// terminating [EOS] when one is produced.
template <typename T>
std::vector<int> greedy_decode(const DecoderModelT<T>& model, const TaggedSequence& prompt,
                               int max_new_tokens);

// Renders the prompt for (instruction, optional data), greedy-decodes,
// drops special tokens, and strips the leading response header: the
// plain-text response that success checks and metrics consume.
template <typename T>
std::string decode_response(const DecoderModelT<T>& model, const std::string& instruction,
                            const std::optional<std::string>& data, int max_new_tokens);

// run_config_json, when non-empty, is embedded in the header under
// "run_config" so a checkpoint documents the run that produced it.
template <typename T>
void save_checkpoint(const DecoderModelT<T>& model, const std::string& path,
                     const std::string& run_config_json = "");

template <typename T>
DecoderModelT<T> load_checkpoint(const std::string& path);

}  // namespace airlab

#endif  // AIRLAB_MODEL_HPP_
