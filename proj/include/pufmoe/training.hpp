#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "pufmoe/dataset.hpp"
#include "pufmoe/nn.hpp"
#include "pufmoe/rng.hpp"

namespace pufmoe {

/// Batch rule from the modelling setup: one batch per epoch up to the cap.
inline Index batch_size_rule(Index n_train, Index cap = 20000) {
  return std::min(n_train, cap);
}

/// Reduce-on-plateau Adam schedule with early stopping on a validation
/// split; the best-validation parameters win.
///
/// Validation accuracy is the monitored quantity (held-out BCE rises long
/// before accuracy peaks on these tasks, so loss is a misleading monitor),
/// and patience is counted in epochs but floored at a fixed number of
/// optimizer steps: with the batch rule min{N, 20000} a small dataset runs
/// one step per epoch, and an epoch-only patience would starve it.
struct TrainSchedule {
  int max_epochs = 3000;
  double learning_rate = 1e-2;
  int plateau_patience = 10;           // epochs
  long plateau_patience_steps = 400;   // patience floor, in optimizer steps
  double lr_decay = 0.5;
  int early_stop_patience = 25;        // epochs
  long early_stop_patience_steps = 1000;
  double validation_fraction = 0.05;
  Index batch_cap = 20000;
};

struct FitResult {
  int epochs = 0;
  long steps = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_val_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Trains `model` on `data` (labels = all response columns). The model
/// contract: forward_backward(x, y) -> loss with gradients filled,
/// eval_loss(x, y), params(). Deterministic for a fixed seed.
template <class Model>
FitResult fit(Model& model, const CrpSet& data, const TrainSchedule& sched,
              std::uint64_t seed) {
  if (data.count() < 1) throw std::invalid_argument("cannot train on an empty set");
  if (!(sched.validation_fraction >= 0.0 && sched.validation_fraction < 0.5)) {
    throw std::invalid_argument("validation fraction must lie in [0, 0.5)");
  }
  const auto started = std::chrono::steady_clock::now();

  std::vector<Index> order(static_cast<std::size_t>(data.count()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(seed, 0x7261494e));
  shuffle(order, rng);

  Index val_count = 0;
  if (sched.validation_fraction > 0.0 && data.count() > 1) {
    val_count = static_cast<Index>(
        std::llround(sched.validation_fraction * static_cast<double>(data.count())));
    val_count = std::clamp<Index>(val_count, 1, data.count() - 1);
  }
  std::vector<Index> val_rows(order.end() - val_count, order.end());
  std::vector<Index> train_rows(order.begin(), order.end() - val_count);

  MatrixX val_x, val_y;
  if (val_count > 0) {
    features_for(data, val_rows, val_x);
    labels_for(data, val_rows, val_y);
  }

  const Index batch = batch_size_rule(static_cast<Index>(train_rows.size()),
                                      sched.batch_cap);
  const long steps_per_epoch =
      (static_cast<long>(train_rows.size()) + batch - 1) / batch;
  const auto patience_epochs = [&](int epochs, long steps) {
    const long from_steps = (steps + steps_per_epoch - 1) / steps_per_epoch;
    return std::max<long>(epochs, from_steps);
  };
  const long plateau_patience =
      patience_epochs(sched.plateau_patience, sched.plateau_patience_steps);
  const long stop_patience =
      patience_epochs(sched.early_stop_patience, sched.early_stop_patience_steps);

  auto params = model.params();
  AdamState adam(sched.learning_rate);

  FitResult result;
  VectorX best_params = snapshot(params);
  long plateau = 0;
  long stall = 0;
  MatrixX bx, by;
  std::vector<Index> batch_rows;

  const auto monitor = [&](const MatrixX& x, const MatrixX& y) {
    const MatrixX p = model.predict(x);
    long hits = 0;
    for (Index j = 0; j < p.cols(); ++j) {
      for (Index t = 0; t < p.rows(); ++t) {
        hits += (p(t, j) > 0.5 ? 1.0 : 0.0) == y(t, j) ? 1 : 0;
      }
    }
    const double acc = static_cast<double>(hits) / static_cast<double>(p.size());
    return std::make_pair(acc, bce_loss(p, y));
  };

  for (int epoch = 0; epoch < sched.max_epochs; ++epoch) {
    shuffle(train_rows, rng);
    for (std::size_t at = 0; at < train_rows.size(); at += static_cast<std::size_t>(batch)) {
      const auto hi = std::min(train_rows.size(), at + static_cast<std::size_t>(batch));
      batch_rows.assign(train_rows.begin() + static_cast<std::ptrdiff_t>(at),
                        train_rows.begin() + static_cast<std::ptrdiff_t>(hi));
      features_for(data, batch_rows, bx);
      labels_for(data, batch_rows, by);
      const double loss = model.forward_backward(bx, by);
      if (!std::isfinite(loss)) throw TrainingDiverged("non-finite training loss");
      adam.step(params);
      ++result.steps;
    }
    result.epochs = epoch + 1;

    double val_acc, val_loss;
    if (val_count > 0) {
      std::tie(val_acc, val_loss) = monitor(val_x, val_y);
    } else {
      features_for(data, train_rows, bx);
      labels_for(data, train_rows, by);
      std::tie(val_acc, val_loss) = monitor(bx, by);
    }
    if (!std::isfinite(val_loss)) throw TrainingDiverged("non-finite validation loss");

    if (val_acc > result.best_val_accuracy) {
      result.best_val_accuracy = val_acc;
      result.best_val_loss = val_loss;
      best_params = snapshot(params);
      plateau = 0;
      stall = 0;
    } else {
      if (val_acc == result.best_val_accuracy && val_loss < result.best_val_loss) {
        result.best_val_loss = val_loss;
        best_params = snapshot(params);
      }
      ++plateau;
      ++stall;
      if (plateau >= plateau_patience) {
        adam.set_learning_rate(adam.learning_rate() * sched.lr_decay);
        plateau = 0;
      }
      if (stall >= stop_patience) break;
    }
  }

  restore(params, best_params);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return result;
}

/// Held-out accuracy per task; the tie p == 0.5 predicts 0.
template <class Model>
std::vector<double> evaluate_tasks(Model& model, const CrpSet& test) {
  if (test.count() < 1) throw std::invalid_argument("cannot evaluate on an empty set");
  std::vector<long> hits(static_cast<std::size_t>(test.tasks), 0);
  MatrixX x;
  std::vector<Index> rows;
  constexpr Index kChunk = 20000;
  for (Index at = 0; at < test.count(); at += kChunk) {
    const Index hi = std::min(test.count(), at + kChunk);
    rows.resize(static_cast<std::size_t>(hi - at));
    std::iota(rows.begin(), rows.end(), at);
    features_for(test, rows, x);
    const MatrixX p = model.predict(x);
    for (Index j = 0; j < p.cols(); ++j) {
      for (Index t = 0; t < test.tasks; ++t) {
        const int bit = p(t, j) > 0.5 ? 1 : 0;
        hits[static_cast<std::size_t>(t)] +=
            bit == test.responses(t, rows[static_cast<std::size_t>(j)]) ? 1 : 0;
      }
    }
  }
  std::vector<double> acc;
  acc.reserve(hits.size());
  for (const long h : hits) {
    acc.push_back(static_cast<double>(h) / static_cast<double>(test.count()));
  }
  return acc;
}

template <class Model>
double evaluate(Model& model, const CrpSet& test) {
  const auto acc = evaluate_tasks(model, test);
  double sum = 0.0;
  for (const double a : acc) sum += a;
  return sum / static_cast<double>(acc.size());
}

}  // namespace pufmoe
