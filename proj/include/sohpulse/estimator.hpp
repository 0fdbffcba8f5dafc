#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sohpulse/pipeline.hpp"

namespace sohpulse {

enum class EstimatorKind { Ols, Huber, TheilSen };

std::string_view to_string(EstimatorKind kind);
EstimatorKind estimator_kind_from_string(std::string_view name);

inline constexpr std::array<std::string_view, 4> kFeatureNames = {"r1", "r2", "tau1", "tau2"};

struct TrainingMeta {
    std::vector<BatteryId> battery_ids;
    std::size_t row_count = 0;
    double train_mae = 0.0;
    double train_r2 = 0.0;

    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

/// soh = coefficients . (r1, r2, tau1, tau2) + intercept, in the units of
/// FeatureRow (ohm, s, percent).
struct SohModel {
    EstimatorKind kind = EstimatorKind::Ols;
    std::array<double, 4> coefficients{};
    double intercept = 0.0;
    TrainingMeta training_meta;

    void validate() const;
    friend bool operator==(const SohModel&, const SohModel&) = default;
};

struct BatteryMetrics {
    double mae_percent = 0.0;
    double r2 = 0.0;
    double max_abs_error_percent = 0.0;
};

struct Residual {
    BatteryId battery_id = 0;
    int cycle_index = 0;
    double predicted = 0.0;
    double actual = 0.0;
    double error = 0.0;  // predicted - actual
};

struct EvalReport {
    double mae_percent = 0.0;
    double r2 = 0.0;
    std::map<BatteryId, BatteryMetrics> per_battery;
    std::vector<Residual> residuals;
};

struct HuberOptions {
    /// Transition point as a multiple of the MAD-based residual scale.
    double tuning = 1.345;
    int max_iterations = 100;
    double tolerance = 1e-8;
};

struct TheilSenOptions {
    std::size_t max_subsets = 10000;
    std::uint64_t seed = 0;
};

SohModel train_ols(std::span<const FeatureRow> rows);
SohModel train_huber(std::span<const FeatureRow> rows, const HuberOptions& options = {});
SohModel train_theil_sen(std::span<const FeatureRow> rows, const TheilSenOptions& options = {});
SohModel train(std::span<const FeatureRow> rows, EstimatorKind kind, std::uint64_t seed = 0);

double predict(const SohModel& model, const FeatureRow& row);

double mae(std::span<const double> predicted, std::span<const double> actual);
double r2(std::span<const double> predicted, std::span<const double> actual);

EvalReport evaluate(const SohModel& model, std::span<const FeatureRow> rows);

struct CrossBatteryResult {
    SohModel model;
    EvalReport report;  // per_battery holds one entry per test battery
};

CrossBatteryResult cross_battery_eval(std::span<const FeatureRow> rows, const std::set<BatteryId>& train_ids,
                                      const std::set<BatteryId>& test_ids, EstimatorKind kind,
                                      std::uint64_t seed = 0);

}  // namespace sohpulse
