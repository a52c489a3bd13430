#include "airlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace airlab {

void AttackConfig::validate() const {
  if (prefix_len < 1) throw std::invalid_argument("attack config: prefix_len must be >= 1");
  if (steps < 0) throw std::invalid_argument("attack config: steps must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("attack config: momentum must be in [0,1)");
  }
  if (topk_per_position < 1 || topk_per_position > 256) {
    throw std::invalid_argument("attack config: topk_per_position must be in [1,256]");
  }
  if (candidates_per_step < 1) {
    throw std::invalid_argument("attack config: candidates_per_step must be >= 1");
  }
  if (target.empty()) throw std::invalid_argument("attack config: empty target");
  if (adversarial_instruction.empty()) {
    throw std::invalid_argument("attack config: empty adversarial instruction");
  }
}

TaggedSequence build_attack_sequence(const std::string& instruction, const std::string& data,
                                     const std::vector<int>& prefix,
                                     const std::string& adversarial_instruction,
                                     const std::optional<std::string>& target, Mechanism mechanism,
                                     int* prefix_begin_out) {
  for (int id : prefix) {
    if (id < 0 || id >= 256) {
      throw std::invalid_argument("attack: prefix token " + std::to_string(id) +
                                  " is not a data byte");
    }
  }
  const std::string data_hat = data + detokenize(prefix) + adversarial_instruction;
  TaggedSequence seq = render_chat_template(instruction, data_hat, target, mechanism);
  if (prefix_begin_out != nullptr) {
    // Byte tokenizer: token index = data content start + byte offset.
    *prefix_begin_out = seq.data_begin + static_cast<int>(data.size());
  }
  return seq;
}

template <typename T>
double gcg_loss(const DecoderModelT<T>& model, const std::string& instruction,
                const std::string& data, const std::vector<int>& prefix,
                const std::string& adversarial_instruction, const std::string& target) {
  const TaggedSequence seq = build_attack_sequence(instruction, data, prefix,
                                                   adversarial_instruction, target,
                                                   model.config.mechanism, nullptr);
  NoGradGuard ng;
  TensorT<T> logits = forward_logits(model, seq);
  return static_cast<double>(response_target_loss(logits, seq, Reduction::Sum).item());
}

GcgStepResult gcg_step(const DecoderModel& model, GcgState& state, const AttackConfig& cfg,
                       const std::string& instruction, const std::string& data, Rng& rng) {
  cfg.validate();
  const int plen = static_cast<int>(state.prefix.size());
  if (static_cast<int>(state.momentum.size()) != plen) {
    throw std::invalid_argument("gcg_step: momentum buffer has " +
                                std::to_string(state.momentum.size()) + " rows for prefix length " +
                                std::to_string(plen));
  }
  const int vocab = model.config.vocab;

  int prefix_begin = 0;
  const TaggedSequence seq =
      build_attack_sequence(instruction, data, state.prefix, cfg.adversarial_instruction,
                            cfg.target, model.config.mechanism, &prefix_begin);
  std::vector<int> positions(static_cast<size_t>(plen));
  for (int i = 0; i < plen; ++i) positions[static_cast<size_t>(i)] = prefix_begin + i;
  const auto grad = embedding_gradient(model, seq, positions);

  for (int i = 0; i < plen; ++i) {
    std::vector<double>& row = state.momentum[static_cast<size_t>(i)];
    if (static_cast<int>(row.size()) != vocab) {
      throw std::invalid_argument("gcg_step: momentum row width " + std::to_string(row.size()) +
                                  " for vocab " + std::to_string(vocab));
    }
    for (int v = 0; v < vocab; ++v) {
      row[static_cast<size_t>(v)] =
          cfg.momentum * row[static_cast<size_t>(v)] + static_cast<double>(grad[static_cast<size_t>(i)][static_cast<size_t>(v)]);
    }
  }

  // Top-k most-negative accumulated entries per position; substitutions stay
  // within data bytes (no specials).
  std::vector<std::vector<int>> topk(static_cast<size_t>(plen));
  std::vector<int> byte_ids(256);
  for (int v = 0; v < 256; ++v) byte_ids[static_cast<size_t>(v)] = v;
  for (int i = 0; i < plen; ++i) {
    const std::vector<double>& row = state.momentum[static_cast<size_t>(i)];
    std::vector<int> ids = byte_ids;
    const int k = std::min(cfg.topk_per_position, 256);
    std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int a, int b) {
      if (row[static_cast<size_t>(a)] != row[static_cast<size_t>(b)]) {
        return row[static_cast<size_t>(a)] < row[static_cast<size_t>(b)];
      }
      return a < b;
    });
    ids.resize(static_cast<size_t>(k));
    topk[static_cast<size_t>(i)] = std::move(ids);
  }

  const int k = static_cast<int>(topk[0].size());
  double best_candidate_loss = std::numeric_limits<double>::infinity();
  int best_pos = -1, best_tok = -1;
  std::vector<int> candidate = state.prefix;
  for (int c = 0; c < cfg.candidates_per_step; ++c) {
    const int draw = rng.uniform_int(plen * k);
    const int pos = draw / k;
    const int tok = topk[static_cast<size_t>(pos)][static_cast<size_t>(draw % k)];
    candidate[static_cast<size_t>(pos)] = tok;
    const double loss =
        gcg_loss(model, instruction, data, candidate, cfg.adversarial_instruction, cfg.target);
    candidate[static_cast<size_t>(pos)] = state.prefix[static_cast<size_t>(pos)];
    if (loss < best_candidate_loss) {  // strict: first minimum wins ties
      best_candidate_loss = loss;
      best_pos = pos;
      best_tok = tok;
    }
  }

  if (best_candidate_loss < state.current_loss) {
    state.prefix[static_cast<size_t>(best_pos)] = best_tok;
    state.current_loss = best_candidate_loss;
  }
  return {best_candidate_loss, state.current_loss};
}

AttackTrace run_attack(const DecoderModel& model, const InstructionExample& example,
                       const AttackConfig& cfg) {
  cfg.validate();
  if (!example.input) {
    throw std::invalid_argument("run_attack: example has no data segment");
  }
  const std::string& instruction = example.instruction;
  const std::string& data = *example.input;

  Rng rng(cfg.seed);
  GcgState state;
  state.prefix.resize(static_cast<size_t>(cfg.prefix_len));
  for (int& id : state.prefix) id = rng.uniform_int(256);
  state.momentum.assign(static_cast<size_t>(cfg.prefix_len),
                        std::vector<double>(static_cast<size_t>(model.config.vocab), 0.0));
  state.current_loss =
      gcg_loss(model, instruction, data, state.prefix, cfg.adversarial_instruction, cfg.target);

  AttackTrace trace;
  trace.steps.push_back({0, state.current_loss, state.current_loss, state.prefix});
  for (int s = 0; s < cfg.steps; ++s) {
    const GcgStepResult res = gcg_step(model, state, cfg, instruction, data, rng);
    trace.steps.push_back({s + 1, res.candidate_loss, res.current_loss, state.prefix});
  }
  trace.final_prefix = state.prefix;
  trace.target_log_likelihood = -state.current_loss;

  const std::string data_hat = data + detokenize(state.prefix) + cfg.adversarial_instruction;
  const int budget = static_cast<int>(std::string(kRespHeader).size() + cfg.target.size()) + 4;
  const std::string response = decode_response(model, instruction, data_hat, budget);
  trace.success = response.compare(0, cfg.target.size(), cfg.target) == 0;
  return trace;
}

std::string attack_trace_to_csv(const AttackTrace& trace) {
  std::ostringstream out;
  out << "step,loss,best_loss\n";
  char buf[96];
  for (const auto& rec : trace.steps) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", rec.step, rec.candidate_loss,
                  rec.best_loss);
    out << buf;
  }
  return out.str();
}

std::string attack_summary_json(const AttackTrace& trace) {
  static const char* hex = "0123456789abcdef";
  std::string prefix_hex;
  for (int id : trace.final_prefix) {
    prefix_hex.push_back(hex[(id >> 4) & 0xf]);
    prefix_hex.push_back(hex[id & 0xf]);
  }
  nlohmann::json j;
  j["success"] = trace.success;
  j["target_log_likelihood"] = trace.target_log_likelihood;
  j["final_loss"] = trace.steps.empty() ? 0.0 : trace.steps.back().best_loss;
  j["steps"] = static_cast<int>(trace.steps.empty() ? 0 : trace.steps.size() - 1);
  j["prefix_hex"] = prefix_hex;
  return j.dump();
}

template double gcg_loss<float>(const DecoderModelT<float>&, const std::string&, const std::string&,
                                const std::vector<int>&, const std::string&, const std::string&);
template double gcg_loss<double>(const DecoderModelT<double>&, const std::string&,
                                 const std::string&, const std::vector<int>&, const std::string&,
                                 const std::string&);

}  // namespace airlab
