#pragma once

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pyrafuse/model.hpp"
#include "pyrafuse/rng.hpp"
#include "pyrafuse/train/data.hpp"
#include "pyrafuse/train/loss.hpp"
#include "pyrafuse/train/metrics.hpp"
#include "pyrafuse/train/optim.hpp"

namespace pyrafuse {

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t iter, const std::string& what)
      : std::runtime_error("iteration " + std::to_string(iter) + ": " + what), iter_(iter) {}
  std::size_t iteration() const { return iter_; }

 private:
  std::size_t iter_;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  PolySchedule schedule{3e-4, 1, 0.9};  // max_iter is derived from epochs and dataset size
  bool augment = true;
  AugmentConfig augmentation;
  bool class_weights = true;
  std::uint64_t seed = 0;
  std::size_t eval_batch = 16;
  std::size_t stop_after = 0;  // nonzero ends the run after this epoch without shortening the schedule
};

/// Progress that survives a checkpoint round trip.
struct TrainState {
  std::size_t iter = 0;
  std::size_t epoch = 0;  // completed epochs
  double best_miou = -1.0;
  std::size_t best_epoch = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_miou = 0.0;
  std::vector<std::optional<double>> val_iou;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> losses;  // one per iteration
};

inline std::size_t iters_per_epoch(std::size_t samples, std::size_t batch) { return (samples + batch - 1) / batch; }

/// Confusion matrix of `model` over `samples` in eval mode.
template <class T>
ConfusionMatrix evaluate(Model<T>& model, const std::vector<Sample>& samples, std::size_t classes,
                         std::size_t batch = 16) {
  ConfusionMatrix cm(classes, static_cast<std::int32_t>(classes));
  for (std::size_t b = 0; b < samples.size(); b += batch) {
    std::vector<const Image*> imgs;
    std::vector<const LabelImage*> lbls;
    for (std::size_t i = b; i < std::min(samples.size(), b + batch); ++i) {
      imgs.push_back(&samples[i].image);
      lbls.push_back(&samples[i].label);
    }
    const Tensor<T> logits = model.forward(images_to_tensor<T>(imgs), Mode::Eval);
    const auto pred = argmax_channels(logits);
    const LabelBatch truth = labels_to_batch(lbls);
    cm.add(truth.ids, pred);
  }
  return cm;
}

/// Minibatch Adam with the poly schedule, evaluated on the validation split
/// after every epoch. Resumes from `state`; `on_epoch` runs after each epoch.
template <class T>
TrainHistory train_loop(Model<T>& model, const Dataset& data, const TrainOptions& opt, TrainState& state,
                        AdamState<T>& adam,
                        const std::function<void(const EpochRecord&, const TrainState&)>& on_epoch = {}) {
  if (data.train.empty()) throw std::invalid_argument("train_loop: empty training split");
  const std::size_t k = data.classes;
  const std::size_t per_epoch = iters_per_epoch(data.train.size(), opt.batch_size);
  PolySchedule sched = opt.schedule;
  sched.max_iter = per_epoch * opt.epochs;
  const std::vector<double> weights =
      opt.class_weights ? inverse_frequency_weights(class_counts(data.train, k)) : std::vector<double>(k, 1.0);
  AugmentConfig aug = opt.augmentation;
  aug.ignore = static_cast<std::uint8_t>(k);

  const std::vector<Tensor<T>> params = model.params.trainable();
  model.params.set_requires_grad(true);
  if (adam.m.empty()) adam.init(params);

  TrainHistory hist;
  const std::size_t last_epoch = opt.stop_after ? std::min(opt.epochs, opt.stop_after) : opt.epochs;
  for (std::size_t epoch = state.epoch; epoch < last_epoch; ++epoch) {
    Rng rng(opt.seed * 0x100000001B3ull + epoch + 1);
    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      std::vector<Sample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + opt.batch_size); ++i) {
        const Sample& s = data.train[order[i]];
        batch.push_back(opt.augment ? augment(s, aug, rng) : s);
      }
      std::vector<const Image*> imgs;
      std::vector<const LabelImage*> lbls;
      for (const auto& s : batch) {
        imgs.push_back(&s.image);
        lbls.push_back(&s.label);
      }
      const Tensor<T> x = images_to_tensor<T>(imgs);
      const LabelBatch y = labels_to_batch(lbls);

      Tape<T> tape;
      Tensor<T> loss;
      {
        typename Tape<T>::Scope scope(tape);
        loss = weighted_cross_entropy(model.forward(x, Mode::Train), y, weights, static_cast<std::int32_t>(k));
      }
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw TrainingError(state.iter, "non-finite loss " + std::to_string(lv));
      backward(tape, loss);
      lr = poly_lr(sched, state.iter);
      adam_step(params, adam, lr);
      model.params.zero_grad();
      hist.losses.push_back(lv);
      loss_sum += lv;
      ++state.iter;
    }

    const IouResult iou = miou(evaluate(model, data.val.empty() ? data.train : data.val, k, opt.eval_batch));
    EpochRecord rec{epoch + 1, state.iter, lr, loss_sum / static_cast<double>(per_epoch), iou.mean, iou.per_class};
    state.epoch = epoch + 1;
    if (iou.mean > state.best_miou) {
      state.best_miou = iou.mean;
      state.best_epoch = epoch + 1;
    }
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, state);
  }
  return hist;
}

}  // namespace pyrafuse
