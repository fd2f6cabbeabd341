#pragma once

#include <atomic>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslab/corpus.hpp"
#include "sslab/error.hpp"
#include "sslab/lexical.hpp"
#include "sslab/metrics.hpp"
#include "sslab/rng.hpp"

namespace sslab {

/// Assignment of every record index to one of K folds.
struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;  // record index -> fold id in [0, k)
  std::uint64_t seed = 0;
  std::vector<double> bin_edges;       // n_bins + 1 sorted edges over [0, 1]
  std::vector<std::size_t> bin_of;     // record index -> stratum

  std::size_t n_bins() const { return bin_edges.empty() ? 0 : bin_edges.size() - 1; }

  std::vector<std::size_t> validation_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == fold) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] != fold) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(k, 0);
    for (auto f : assignment) ++sizes[f];
    return sizes;
  }
};

/// Stratified plan over continuous scores: equal-width bins on [0, 1]; within
/// each bin the indices are shuffled and dealt to folds by one running
/// round-robin counter that carries across bins, so both overall fold sizes
/// and per-bin fold counts differ by at most one.
inline FoldPlan stratified_kfold(std::span<const double> scores, std::size_t k, std::size_t n_bins,
                                 std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "K must be >= 2");
  if (n_bins == 0) throw Error(ErrorKind::InvalidConfig, "n_bins must be >= 1");
  if (scores.size() < k) {
    throw Error(ErrorKind::TooFewRecords,
                std::to_string(scores.size()) + " records for " + std::to_string(k) + " folds");
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.bin_edges.resize(n_bins + 1);
  for (std::size_t b = 0; b <= n_bins; ++b) {
    plan.bin_edges[b] = static_cast<double>(b) / static_cast<double>(n_bins);
  }
  std::vector<std::vector<std::size_t>> strata(n_bins);
  plan.bin_of.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const std::size_t b = unit_bin(scores[i], n_bins);
    plan.bin_of[i] = b;
    strata[b].push_back(i);
  }
  Rng rng(seed);
  plan.assignment.assign(scores.size(), 0);
  std::size_t next_fold = 0;
  for (auto& members : strata) {
    rng.shuffle(std::span<std::size_t>(members));
    for (auto idx : members) {
      plan.assignment[idx] = next_fold;
      next_fold = (next_fold + 1) % k;
    }
  }
  return plan;
}

inline FoldPlan stratified_kfold(const Dataset& d, std::size_t k, std::size_t n_bins,
                                 std::uint64_t seed) {
  std::vector<double> scores;
  scores.reserve(d.size());
  for (const auto& r : d.records) scores.push_back(r.score);
  return stratified_kfold(scores, k, n_bins, seed);
}

struct FoldMetrics {
  std::size_t fold = 0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  std::optional<double> pearson;
  std::string pearson_status = "ok";
};

struct MetricsReport {
  std::vector<FoldMetrics> folds;       // ordered by fold id
  std::vector<double> heldout_predictions;  // record index -> prediction from its own fold
  double cv_estimate = 0.0;
  std::optional<double> mean_pearson;   // over folds with a defined pearson
  std::string training_loss_definition;
};

/// What a fold runner reports back: its training loss and one prediction per
/// validation index, in the order given.
struct FoldOutcome {
  double train_loss = 0.0;
  std::vector<double> predictions;
};

using FoldRunner = std::function<FoldOutcome(const Dataset& d, std::span<const std::size_t> train,
                                             std::span<const std::size_t> validation,
                                             std::size_t fold)>;

/// Rounds to 15 significant digits, the decimal precision a double always
/// carries, so binary noise from averaging decimal inputs is dropped.
inline double round_decimal15(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 15).ptr;
  double out = v;
  std::from_chars(buf, end, out);
  return out;
}

/// Record-weighted mean of per-fold mean losses, accumulated in extended
/// precision and rounded to 15 significant digits.
inline double cv_estimate_from_folds(std::span<const FoldMetrics> folds) {
  long double sum = 0.0L;
  std::size_t n = 0;
  for (const auto& f : folds) {
    sum += static_cast<long double>(f.validation_loss) * static_cast<long double>(f.n_validation);
    n += f.n_validation;
  }
  if (n == 0) return 0.0;
  return round_decimal15(static_cast<double>(sum / static_cast<long double>(n)));
}

inline std::optional<double> mean_defined_pearson(std::span<const FoldMetrics> folds) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& f : folds) {
    if (f.pearson) {
      s += *f.pearson;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

/// Runs every fold through `runner` (concurrently when workers > 1) and
/// assembles the report in fold order. The CV estimate is the mean squared
/// held-out error over all N records.
inline MetricsReport cross_validate(const Dataset& d, const FoldPlan& plan, const FoldRunner& runner,
                                    std::size_t workers = 1,
                                    std::string training_loss_definition = {}) {
  if (plan.assignment.size() != d.size()) {
    throw Error(ErrorKind::InvalidConfig, "fold plan covers " +
                                              std::to_string(plan.assignment.size()) +
                                              " records, dataset has " + std::to_string(d.size()));
  }
  const std::size_t k = plan.k;
  std::vector<FoldOutcome> outcomes(k);
  std::vector<std::exception_ptr> failures(k);
  std::vector<std::vector<std::size_t>> train_idx(k), val_idx(k);
  for (std::size_t f = 0; f < k; ++f) {
    train_idx[f] = plan.train_indices(f);
    val_idx[f] = plan.validation_indices(f);
  }

  auto run_fold = [&](std::size_t f) {
    try {
      if (train_idx[f].empty() || val_idx[f].empty()) {
        throw Error(ErrorKind::EmptySplit, "fold has an empty side");
      }
      outcomes[f] = runner(d, train_idx[f], val_idx[f], f);
      if (outcomes[f].predictions.size() != val_idx[f].size()) {
        throw Error(ErrorKind::ShapeMismatch, "runner returned " +
                                                  std::to_string(outcomes[f].predictions.size()) +
                                                  " predictions for " +
                                                  std::to_string(val_idx[f].size()) + " records");
      }
    } catch (...) {
      failures[f] = std::current_exception();
    }
  };

  workers = std::max<std::size_t>(1, std::min(workers, k));
  if (workers == 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) run_fold(f);
      });
    }
  }

  for (std::size_t f = 0; f < k; ++f) {
    if (!failures[f]) continue;
    try {
      std::rethrow_exception(failures[f]);
    } catch (const Error& e) {
      throw Error(e.kind(), "fold " + std::to_string(f) + ": " + e.detail(), e.row());
    }
  }

  MetricsReport rep;
  rep.training_loss_definition = std::move(training_loss_definition);
  rep.heldout_predictions.assign(d.size(), 0.0);
  long double total = 0.0L;
  for (std::size_t f = 0; f < k; ++f) {
    FoldMetrics m;
    m.fold = f;
    m.n_train = train_idx[f].size();
    m.n_validation = val_idx[f].size();
    m.train_loss = outcomes[f].train_loss;
    std::vector<double> gold;
    gold.reserve(val_idx[f].size());
    for (std::size_t j = 0; j < val_idx[f].size(); ++j) {
      const std::size_t i = val_idx[f][j];
      const double p = outcomes[f].predictions[j];
      rep.heldout_predictions[i] = p;
      gold.push_back(d[i].score);
      const double e = p - d[i].score;
      total += static_cast<long double>(e * e);
    }
    m.validation_loss = mean_squared_error(gold, outcomes[f].predictions);
    try {
      m.pearson = pearson(gold, outcomes[f].predictions);
    } catch (const Error& e) {
      m.pearson_status = std::string(to_string(e.kind()));
    }
    rep.folds.push_back(std::move(m));
  }
  rep.cv_estimate = round_decimal15(static_cast<double>(total / static_cast<long double>(d.size())));
  rep.mean_pearson = mean_defined_pearson(rep.folds);
  return rep;
}

/// The lexical baseline under the same protocol. The predictor ignores the
/// training side; its reported training loss is the MSE on the training records.
inline MetricsReport evaluate_baseline_cv(const Dataset& d, const FoldPlan& plan,
                                          std::size_t workers = 1) {
  std::vector<double> sims;
  sims.reserve(d.size());
  for (const auto& r : d.records) sims.push_back(baseline_similarity(r));
  FoldRunner runner = [&sims](const Dataset& data, std::span<const std::size_t> train,
                              std::span<const std::size_t> val, std::size_t) {
    FoldOutcome out;
    std::vector<double> gold, pred;
    for (auto i : train) {
      gold.push_back(data[i].score);
      pred.push_back(sims[i]);
    }
    out.train_loss = mean_squared_error(gold, pred);
    for (auto i : val) out.predictions.push_back(sims[i]);
    return out;
  };
  return cross_validate(d, plan, runner, workers, "mean squared error of the similarity on the training folds");
}

/// `cv_report.json` payload: one row per fold with the columns
/// fold / training_loss / validation_loss / pearson_correlation.
inline nlohmann::json cv_report_json(const MetricsReport& rep, const FoldPlan& plan) {
  nlohmann::json j;
  j["k"] = plan.k;
  j["n_bins"] = plan.n_bins();
  j["seed"] = plan.seed;
  j["n_records"] = plan.assignment.size();
  j["cv_estimate"] = rep.cv_estimate;
  j["mean_pearson"] = rep.mean_pearson ? nlohmann::json(*rep.mean_pearson) : nlohmann::json(nullptr);
  j["training_loss_definition"] = rep.training_loss_definition;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& f : rep.folds) {
    nlohmann::json row;
    row["fold"] = f.fold + 1;
    row["n_train"] = f.n_train;
    row["n_validation"] = f.n_validation;
    row["training_loss"] = f.train_loss;
    row["validation_loss"] = f.validation_loss;
    row["pearson_correlation"] = f.pearson ? nlohmann::json(*f.pearson) : nlohmann::json(nullptr);
    row["pearson_status"] = f.pearson_status;
    rows.push_back(std::move(row));
  }
  j["folds"] = std::move(rows);
  return j;
}

}  // namespace sslab
