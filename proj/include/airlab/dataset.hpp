#ifndef AIRLAB_DATASET_HPP_
#define AIRLAB_DATASET_HPP_

#include <optional>
#include <string>
#include <vector>

#include "airlab/rng.hpp"

namespace airlab {

// Alpaca-schema task example: instruction I, optional input segment D,
// desired response R.
struct InstructionExample {
  std::string instruction;
  std::optional<std::string> input;
  std::string output;
};

enum class StaticAttackKind { Naive, Ignore, Completion, EscapeSeparation };

const char* static_attack_kind_name(StaticAttackKind kind);
StaticAttackKind static_attack_kind_from_name(const std::string& name);

// Stage-2 SFT example: input is the original D, a corrupted D-hat, or
// absent. Corrupted examples record which attack built them and which
// example donated the injected instruction.
struct AdversarialSFTExample {
  std::string instruction;
  std::optional<std::string> input;
  std::string output;
  bool corrupted = false;
  std::optional<StaticAttackKind> attack_kind;
  int donor_index = -1;
};

// DPO pair: the corrupted input carries an injected instruction; chosen is
// the example's own response, rejected is the donor's.
struct PreferenceExample {
  std::string instruction;
  std::string input;
  std::string chosen;
  std::string rejected;
  int donor_index = -1;
};

// Fixed prefix text prepended to an injected instruction; Naive is empty
// (the injection is appended bare).
std::string static_prefix(StaticAttackKind kind);

// D-hat = D + static_prefix(kind) + adversarial instruction.
std::string inject(const std::string& data, StaticAttackKind kind,
                   const std::string& adversarial_instruction);

// Corrupts floor(half) of the with-input examples: uniform Naive/Ignore
// prefix plus the instruction of a uniformly drawn different example.
// No-input examples pass through untouched.
std::vector<AdversarialSFTExample> build_adversarial_sft(
    const std::vector<InstructionExample>& dataset, Rng& rng);

// One pair per with-input example; the donor that supplies the injected
// instruction also supplies the rejected response (redrawn when its output
// collides with the chosen one).
std::vector<PreferenceExample> build_dpo(const std::vector<InstructionExample>& dataset, Rng& rng);

// Deterministic micro-task generator: {echo, uppercase, reverse, count
// words, last word} over short ASCII payloads. A fixed fraction of examples
// carry the payload in the input segment; the rest inline it in the
// instruction.
std::vector<InstructionExample> synth_task_dataset(uint64_t seed, int n,
                                                   double with_input_fraction = 0.6);

// JSON-lines IO (Alpaca schema). Writers may embed a run configuration as a
// first-line {"_config": ...} object, which readers skip.
std::vector<InstructionExample> load_dataset(const std::string& path);
void save_dataset(const std::string& path, const std::vector<InstructionExample>& examples,
                  const std::string& config_json = "");

std::vector<AdversarialSFTExample> load_adversarial_dataset(const std::string& path);
void save_adversarial_dataset(const std::string& path,
                              const std::vector<AdversarialSFTExample>& examples,
                              const std::string& config_json = "");

std::vector<PreferenceExample> load_preference_dataset(const std::string& path);
void save_preference_dataset(const std::string& path,
                             const std::vector<PreferenceExample>& examples,
                             const std::string& config_json = "");

}  // namespace airlab

#endif  // AIRLAB_DATASET_HPP_
