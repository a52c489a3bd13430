#ifndef AIRLAB_TRAIN_HPP_
#define AIRLAB_TRAIN_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "airlab/dataset.hpp"
#include "airlab/model.hpp"

namespace airlab {

enum class TrainStage { Stage1SFT, Stage2SFT, Stage2DPO };

const char* train_stage_name(TrainStage stage);
TrainStage train_stage_from_name(const std::string& name);

struct TrainConfig {
  TrainStage stage = TrainStage::Stage1SFT;
  int epochs = 3;
  double lr = 3e-4;
  int batch = 4;
  int grad_accum = 4;     // optimizer steps every batch*grad_accum examples
  double beta = 0.1;      // DPO temperature
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

struct TrainStepRecord {
  int step = 0;
  double loss = 0;
  double lr = 0;
};

struct TrainTrace {
  std::vector<TrainStepRecord> steps;
  std::vector<double> epoch_holdout_loss;  // empty when no holdout set given
};

std::string trace_to_csv(const TrainTrace& trace);

// Exactly one member may be non-empty, and it must match the configured
// stage.
struct TrainData {
  std::vector<InstructionExample> sft;
  std::vector<AdversarialSFTExample> adversarial;
  std::vector<PreferenceExample> preference;
};

TaggedSequence render_training_example(const std::string& instruction,
                                       const std::optional<std::string>& input,
                                       const std::string& output, Mechanism mechanism);

// Mean next-token cross-entropy over response positions.
template <typename T>
TensorT<T> sft_loss(const DecoderModelT<T>& model, const TaggedSequence& seq);

// -log sigmoid(beta * [(logp_m(chosen) - logp_ref(chosen)) -
// (logp_m(rejected) - logp_ref(rejected))]) with log-probabilities summed
// over response tokens; reference terms carry no gradient.
template <typename T>
TensorT<T> dpo_loss(const DecoderModelT<T>& model, const DecoderModelT<T>& reference,
                    const PreferenceExample& pair, double beta);

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<std::pair<std::string, TensorT<T>>>& params,
                      double max_norm);

// Adam with decoupled weight decay; 1-D tensors (norm gains) are not
// decayed.
template <typename T>
class AdamWT {
 public:
  AdamWT(std::vector<std::pair<std::string, TensorT<T>>> params, double weight_decay,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);
  void zero_grad();

 private:
  struct Slot {
    TensorT<T> param;
    std::vector<double> m, v;
    bool decay = false;
  };
  std::vector<Slot> slots_;
  double weight_decay_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

using AdamW = AdamWT<float>;

// Runs the configured stage over the matching dataset: AdamW, linear decay
// of the learning rate to zero over all optimizer steps, gradient
// accumulation, seeded per-epoch shuffling. `reference` is required (and
// left untouched) for the DPO stage. `holdout` adds a per-epoch mean
// response loss to the trace.
TrainTrace train_pipeline(DecoderModel& model, const DecoderModel* reference,
                          const TrainData& data, const TrainConfig& cfg,
                          const std::vector<InstructionExample>* holdout = nullptr);

}  // namespace airlab

#endif  // AIRLAB_TRAIN_HPP_
