#include "airlab/train.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace airlab {

const char* train_stage_name(TrainStage stage) {
  switch (stage) {
    case TrainStage::Stage1SFT: return "stage1_sft";
    case TrainStage::Stage2SFT: return "stage2_sft";
    case TrainStage::Stage2DPO: return "stage2_dpo";
  }
  throw std::invalid_argument("train_stage_name: unknown stage");
}

TrainStage train_stage_from_name(const std::string& name) {
  if (name == "stage1_sft") return TrainStage::Stage1SFT;
  if (name == "stage2_sft") return TrainStage::Stage2SFT;
  if (name == "stage2_dpo") return TrainStage::Stage2DPO;
  throw std::invalid_argument("train_stage: unknown name '" + name +
                              "' (expected stage1_sft|stage2_sft|stage2_dpo)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (!(lr > 0)) throw std::invalid_argument("train config: lr must be > 0");
  if (batch < 1 || grad_accum < 1) {
    throw std::invalid_argument("train config: batch and grad_accum must be >= 1");
  }
  if (!(beta > 0)) throw std::invalid_argument("train config: beta must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(clip_norm > 0)) throw std::invalid_argument("train config: clip_norm must be > 0");
}

std::string trace_to_csv(const TrainTrace& trace) {
  std::ostringstream out;
  out << "step,loss,lr\n";
  char buf[96];
  for (const auto& rec : trace.steps) {
    std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g\n", rec.step, rec.loss, rec.lr);
    out << buf;
  }
  return out.str();
}

TaggedSequence render_training_example(const std::string& instruction,
                                       const std::optional<std::string>& input,
                                       const std::string& output, Mechanism mechanism) {
  return render_chat_template(instruction, input, output, mechanism);
}

template <typename T>
TensorT<T> sft_loss(const DecoderModelT<T>& model, const TaggedSequence& seq) {
  TensorT<T> logits = forward_logits(model, seq);
  return response_target_loss(logits, seq, Reduction::Mean);
}

template <typename T>
TensorT<T> dpo_loss(const DecoderModelT<T>& model, const DecoderModelT<T>& reference,
                    const PreferenceExample& pair, double beta) {
  if (!(beta > 0)) throw std::invalid_argument("dpo_loss: beta must be > 0");
  const Mechanism mech = model.config.mechanism;
  const TaggedSequence chosen_seq =
      render_chat_template(pair.instruction, pair.input, pair.chosen, mech);
  const TaggedSequence rejected_seq =
      render_chat_template(pair.instruction, pair.input, pair.rejected, mech);

  // Summed response log-probabilities; the reference side is a constant.
  TensorT<T> lp_chosen = scale(
      response_target_loss(forward_logits(model, chosen_seq), chosen_seq, Reduction::Sum), -1.0);
  TensorT<T> lp_rejected = scale(
      response_target_loss(forward_logits(model, rejected_seq), rejected_seq, Reduction::Sum), -1.0);
  double ref_margin = 0;
  {
    NoGradGuard ng;
    const double ref_chosen =
        -response_target_loss(forward_logits(reference, chosen_seq), chosen_seq, Reduction::Sum)
             .item();
    const double ref_rejected =
        -response_target_loss(forward_logits(reference, rejected_seq), rejected_seq, Reduction::Sum)
             .item();
    ref_margin = ref_chosen - ref_rejected;
  }
  // z = beta * [(lp_c - lp_r) - ref_margin]; loss = softplus(-z).
  TensorT<T> z = add_scalar(scale(sub(lp_chosen, lp_rejected), beta), -beta * ref_margin);
  return softplus(scale(z, -1.0));
}

template <typename T>
double clip_grad_norm(const std::vector<std::pair<std::string, TensorT<T>>>& params,
                      double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  double sum_sq = 0;
  for (const auto& [name, t] : params) {
    if (!t.grad) continue;
    for (T g : *t.grad) sum_sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sum_sq);
  if (norm > max_norm) {
    const double scale_by = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.grad) continue;
      for (T& g : *t.grad) g = static_cast<T>(g * scale_by);
    }
  }
  return norm;
}

template <typename T>
AdamWT<T>::AdamWT(std::vector<std::pair<std::string, TensorT<T>>> params, double weight_decay,
                  double beta1, double beta2, double eps)
    : weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, t] : params) {
    Slot s;
    s.param = t;
    s.param.ensure_grad();
    s.m.assign(static_cast<size_t>(t.numel()), 0.0);
    s.v.assign(static_cast<size_t>(t.numel()), 0.0);
    s.decay = t.ndim() >= 2;
    slots_.push_back(std::move(s));
  }
}

template <typename T>
void AdamWT<T>::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Slot& s : slots_) {
    T* p = s.param.ptr();
    const T* g = s.param.grad->data();
    const size_t n = s.m.size();
    for (size_t i = 0; i < n; ++i) {
      const double gi = static_cast<double>(g[i]);
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
      double update = lr * (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + eps_);
      if (s.decay) update += lr * weight_decay_ * static_cast<double>(p[i]);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
    }
  }
}

template <typename T>
void AdamWT<T>::zero_grad() {
  for (Slot& s : slots_) s.param.zero_grad();
}

namespace {

void check_stage_data(const TrainConfig& cfg, const TrainData& data) {
  const size_t n_sft = data.sft.size();
  const size_t n_adv = data.adversarial.size();
  const size_t n_pref = data.preference.size();
  auto mismatch = [&](const char* need) {
    throw std::invalid_argument(std::string("train: stage ") + train_stage_name(cfg.stage) +
                                " requires exactly the " + need + " dataset (got sft=" +
                                std::to_string(n_sft) + ", adversarial=" + std::to_string(n_adv) +
                                ", preference=" + std::to_string(n_pref) + ")");
  };
  switch (cfg.stage) {
    case TrainStage::Stage1SFT:
      if (n_sft == 0 || n_adv != 0 || n_pref != 0) mismatch("sft");
      break;
    case TrainStage::Stage2SFT:
      if (n_adv == 0 || n_sft != 0 || n_pref != 0) mismatch("adversarial");
      break;
    case TrainStage::Stage2DPO:
      if (n_pref == 0 || n_sft != 0 || n_adv != 0) mismatch("preference");
      break;
  }
}

}  // namespace

TrainTrace train_pipeline(DecoderModel& model, const DecoderModel* reference,
                          const TrainData& data, const TrainConfig& cfg,
                          const std::vector<InstructionExample>* holdout) {
  cfg.validate();
  check_stage_data(cfg, data);
  if (cfg.stage == TrainStage::Stage2DPO && reference == nullptr) {
    throw std::invalid_argument("train: DPO stage requires the frozen stage-1 reference model");
  }
  const Mechanism mech = model.config.mechanism;
  const int n = static_cast<int>(cfg.stage == TrainStage::Stage1SFT    ? data.sft.size()
                                 : cfg.stage == TrainStage::Stage2SFT ? data.adversarial.size()
                                                                      : data.preference.size());
  const int per_step = cfg.batch * cfg.grad_accum;
  const int steps_per_epoch = (n + per_step - 1) / per_step;
  const int total_steps = cfg.epochs * steps_per_epoch;

  // Per-example loss closure over the active dataset.
  auto example_loss = [&](int idx) -> Tensor {
    switch (cfg.stage) {
      case TrainStage::Stage1SFT: {
        const InstructionExample& ex = data.sft[static_cast<size_t>(idx)];
        return sft_loss(model, render_training_example(ex.instruction, ex.input, ex.output, mech));
      }
      case TrainStage::Stage2SFT: {
        const AdversarialSFTExample& ex = data.adversarial[static_cast<size_t>(idx)];
        return sft_loss(model, render_training_example(ex.instruction, ex.input, ex.output, mech));
      }
      case TrainStage::Stage2DPO:
        return dpo_loss(model, *reference, data.preference[static_cast<size_t>(idx)], cfg.beta);
    }
    throw std::logic_error("train: unknown stage");
  };

  Rng rng(cfg.seed);
  auto params = model.named_params();
  AdamW opt(params, cfg.weight_decay);
  TrainTrace trace;
  int step_idx = 0;

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < n; start += per_step) {
      const int count = std::min(per_step, n - start);
      opt.zero_grad();
      double step_loss = 0;
      for (int j = 0; j < count; ++j) {
        Tensor loss = example_loss(order[static_cast<size_t>(start + j)]);
        step_loss += loss.item();
        Tensor scaled = scale(loss, 1.0 / count);
        backward(scaled);
      }
      step_loss /= count;
      if (!std::isfinite(step_loss)) {
        throw std::runtime_error("train: non-finite loss at step " + std::to_string(step_idx));
      }
      clip_grad_norm(params, cfg.clip_norm);
      const double lr_now =
          cfg.lr * (1.0 - static_cast<double>(step_idx) / static_cast<double>(total_steps));
      opt.step(lr_now);
      trace.steps.push_back({step_idx, step_loss, lr_now});
      ++step_idx;
    }
    if (holdout != nullptr) {
      NoGradGuard ng;
      double sum = 0;
      for (const auto& ex : *holdout) {
        sum += sft_loss(model, render_training_example(ex.instruction, ex.input, ex.output, mech))
                   .item();
      }
      trace.epoch_holdout_loss.push_back(holdout->empty() ? 0.0 : sum / holdout->size());
    }
  }
  return trace;
}

template TensorT<float> sft_loss<float>(const DecoderModelT<float>&, const TaggedSequence&);
template TensorT<double> sft_loss<double>(const DecoderModelT<double>&, const TaggedSequence&);
template TensorT<float> dpo_loss<float>(const DecoderModelT<float>&, const DecoderModelT<float>&,
                                        const PreferenceExample&, double);
template TensorT<double> dpo_loss<double>(const DecoderModelT<double>&, const DecoderModelT<double>&,
                                          const PreferenceExample&, double);
template double clip_grad_norm<float>(const std::vector<std::pair<std::string, TensorT<float>>>&,
                                      double);
template double clip_grad_norm<double>(const std::vector<std::pair<std::string, TensorT<double>>>&,
                                       double);
template class AdamWT<float>;
template class AdamWT<double>;

}  // namespace airlab
