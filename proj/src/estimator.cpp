#include "sohpulse/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "sohpulse/error.hpp"

namespace sohpulse {

namespace {

constexpr int kFeatures = 4;
constexpr std::size_t kSubsetSize = kFeatures + 1;

Eigen::MatrixXd feature_matrix(std::span<const FeatureRow> rows) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), kFeatures);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        x(k, 0) = rows[i].r1;
        x(k, 1) = rows[i].r2;
        x(k, 2) = rows[i].tau1;
        x(k, 3) = rows[i].tau2;
    }
    return x;
}

Eigen::VectorXd label_vector(std::span<const FeatureRow> rows) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) y[static_cast<Eigen::Index>(i)] = rows[i].soh_percent;
    return y;
}

void require_rows(std::span<const FeatureRow> rows, std::size_t minimum) {
    if (rows.size() < minimum) {
        std::ostringstream msg;
        msg << "training needs at least " << minimum << " rows, got " << rows.size();
        throw Error(ErrorKind::InsufficientData, msg.str());
    }
    for (const auto& r : rows) {
        for (double v : {r.r1, r.r2, r.tau1, r.tau2, r.soh_percent}) {
            if (!std::isfinite(v)) throw Error(ErrorKind::Domain, "training row holds a non-finite value");
        }
    }
}

struct Standardizer {
    Eigen::RowVectorXd mean;
    Eigen::RowVectorXd scale;

    explicit Standardizer(const Eigen::MatrixXd& x) {
        mean = x.colwise().mean();
        const Eigen::MatrixXd centered = x.rowwise() - mean;
        scale = (centered.colwise().squaredNorm() / static_cast<double>(x.rows())).cwiseSqrt();
    }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        return (x.rowwise() - mean).array().rowwise() / scale.array();
    }
    // Maps (w, b) fitted on standardized columns back to raw feature units.
    void restore(const Eigen::VectorXd& w_std, double b_std, std::array<double, 4>& w, double& b) const {
        b = b_std;
        for (int j = 0; j < kFeatures; ++j) {
            w[static_cast<std::size_t>(j)] = w_std[j] / scale[j];
            b -= w_std[j] * mean[j] / scale[j];
        }
    }
};

// Rank test on centred, unit-norm columns so that units do not matter.
void require_full_rank(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    std::vector<std::string> offending;
    for (int j = 0; j < kFeatures; ++j) {
        const double norm = centered.col(j).norm();
        const double magnitude = x.col(j).cwiseAbs().maxCoeff();
        if (norm <= 1e-12 * std::max(magnitude, std::numeric_limits<double>::min()) * std::sqrt(x.rows())) {
            offending.emplace_back(kFeatureNames[static_cast<std::size_t>(j)]);
            centered.col(j).setZero();
        } else {
            centered.col(j) /= norm;
        }
    }
    if (offending.empty()) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered);
        qr.setThreshold(1e-10);
        if (qr.rank() < kFeatures) {
            const auto& perm = qr.colsPermutation().indices();
            for (Eigen::Index k = qr.rank(); k < kFeatures; ++k) {
                offending.emplace_back(kFeatureNames[static_cast<std::size_t>(perm[k])]);
            }
        }
    }
    if (!offending.empty()) {
        std::string names;
        for (const auto& n : offending) names += (names.empty() ? "" : ", ") + n;
        throw Error(ErrorKind::Collinearity,
                    "feature matrix is rank deficient; collinear or constant columns: " + names);
    }
}

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
    Eigen::MatrixXd design(x.rows(), kFeatures + 1);
    design.leftCols(kFeatures) = x;
    design.col(kFeatures).setOnes();
    return design;
}

void fill_meta(SohModel& model, std::span<const FeatureRow> rows) {
    std::set<BatteryId> ids;
    std::vector<double> predicted, actual;
    for (const auto& r : rows) {
        ids.insert(r.battery_id);
        predicted.push_back(predict(model, r));
        actual.push_back(r.soh_percent);
    }
    model.training_meta.battery_ids.assign(ids.begin(), ids.end());
    model.training_meta.row_count = rows.size();
    model.training_meta.train_mae = mae(predicted, actual);
    try {
        model.training_meta.train_r2 = r2(predicted, actual);
    } catch (const Error&) {
        model.training_meta.train_r2 = std::numeric_limits<double>::quiet_NaN();
    }
}

double median_of(std::vector<double> v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double upper = v[mid];
    if (v.size() % 2 == 1) return upper;
    const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

double binomial(std::size_t n, std::size_t k) {
    double result = 1.0;
    for (std::size_t i = 1; i <= k; ++i) result = result * static_cast<double>(n - k + i) / static_cast<double>(i);
    return result;
}

// Advances `idx` to the next k-combination of [0, n) in lexicographic order.
bool next_combination(std::vector<std::size_t>& idx, std::size_t n) {
    const std::size_t k = idx.size();
    for (std::size_t i = k; i-- > 0;) {
        if (idx[i] < n - k + i) {
            ++idx[i];
            for (std::size_t j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
            return true;
        }
    }
    return false;
}

}  // namespace

std::string_view to_string(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::Ols: return "ols";
        case EstimatorKind::Huber: return "huber";
        case EstimatorKind::TheilSen: return "theil_sen";
    }
    return "unknown";
}

EstimatorKind estimator_kind_from_string(std::string_view name) {
    if (name == "ols") return EstimatorKind::Ols;
    if (name == "huber") return EstimatorKind::Huber;
    if (name == "theil_sen") return EstimatorKind::TheilSen;
    throw Error(ErrorKind::Parse, "unknown estimator kind '" + std::string(name) + "'");
}

void SohModel::validate() const {
    for (double c : coefficients) {
        if (!std::isfinite(c)) throw Error(ErrorKind::Domain, "model coefficient is not finite");
    }
    if (!std::isfinite(intercept)) throw Error(ErrorKind::Domain, "model intercept is not finite");
}

SohModel train_ols(std::span<const FeatureRow> rows) {
    require_rows(rows, 5);
    const Eigen::MatrixXd x = feature_matrix(rows);
    require_full_rank(x);
    const Eigen::VectorXd beta = with_intercept(x).householderQr().solve(label_vector(rows));

    SohModel model;
    model.kind = EstimatorKind::Ols;
    for (int j = 0; j < kFeatures; ++j) model.coefficients[static_cast<std::size_t>(j)] = beta[j];
    model.intercept = beta[kFeatures];
    model.validate();
    fill_meta(model, rows);
    return model;
}

SohModel train_huber(std::span<const FeatureRow> rows, const HuberOptions& options) {
    require_rows(rows, 5);
    if (!(options.tuning > 0.0) || options.max_iterations < 1 || !(options.tolerance > 0.0)) {
        throw Error(ErrorKind::Precondition, "invalid Huber options");
    }
    const Eigen::MatrixXd x = feature_matrix(rows);
    require_full_rank(x);
    const Standardizer standardizer(x);
    const Eigen::MatrixXd design = with_intercept(standardizer.apply(x));
    const Eigen::VectorXd y = label_vector(rows);
    const auto n = design.rows();

    // Residual scale never drops below this, so an exact fit does not divide by zero.
    const double y_spread = std::max(1.0, y.cwiseAbs().maxCoeff());
    const double scale_floor = 1e-12 * y_spread;

    Eigen::VectorXd beta = design.householderQr().solve(y);
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Eigen::VectorXd resid = y - design * beta;
        std::vector<double> abs_dev(static_cast<std::size_t>(n));
        const double center = median_of(std::vector<double>(resid.data(), resid.data() + n));
        for (Eigen::Index i = 0; i < n; ++i) abs_dev[static_cast<std::size_t>(i)] = std::abs(resid[i] - center);
        const double scale = std::max(median_of(abs_dev) / 0.6744897501960817, scale_floor);
        const double threshold = options.tuning * scale;

        Eigen::VectorXd sqrt_w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double a = std::abs(resid[i]);
            sqrt_w[i] = std::sqrt(a <= threshold ? 1.0 : threshold / a);
        }
        const Eigen::MatrixXd weighted = sqrt_w.asDiagonal() * design;
        const Eigen::VectorXd next = weighted.householderQr().solve(sqrt_w.cwiseProduct(y));
        const double change = (next - beta).norm();
        beta = next;
        if (change <= options.tolerance * std::max(beta.norm(), 1e-300)) break;
    }

    SohModel model;
    model.kind = EstimatorKind::Huber;
    standardizer.restore(beta.head(kFeatures), beta[kFeatures], model.coefficients, model.intercept);
    model.validate();
    fill_meta(model, rows);
    return model;
}

SohModel train_theil_sen(std::span<const FeatureRow> rows, const TheilSenOptions& options) {
    require_rows(rows, 6);
    if (options.max_subsets == 0) throw Error(ErrorKind::Precondition, "Theil-Sen needs max_subsets >= 1");
    const Eigen::MatrixXd x = feature_matrix(rows);
    require_full_rank(x);
    const Standardizer standardizer(x);
    const Eigen::MatrixXd design = with_intercept(standardizer.apply(x));
    const Eigen::VectorXd y = label_vector(rows);
    const std::size_t n = rows.size();

    std::array<std::vector<double>, kSubsetSize> solutions;
    const auto solve_subset = [&](const std::vector<std::size_t>& idx) {
        Eigen::Matrix<double, 5, 5> a;
        Eigen::Matrix<double, 5, 1> b;
        for (std::size_t r = 0; r < kSubsetSize; ++r) {
            a.row(static_cast<Eigen::Index>(r)) = design.row(static_cast<Eigen::Index>(idx[r]));
            b[static_cast<Eigen::Index>(r)] = y[static_cast<Eigen::Index>(idx[r])];
        }
        Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(a);
        lu.setThreshold(1e-10);
        if (!lu.isInvertible()) return;
        const Eigen::Matrix<double, 5, 1> s = lu.solve(b);
        if (!s.allFinite()) return;
        for (std::size_t j = 0; j < kSubsetSize; ++j) solutions[j].push_back(s[static_cast<Eigen::Index>(j)]);
    };

    std::vector<std::size_t> idx(kSubsetSize);
    if (binomial(n, kSubsetSize) <= static_cast<double>(options.max_subsets)) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        do {
            solve_subset(idx);
        } while (next_combination(idx, n));
    } else {
        std::mt19937_64 rng(options.seed);
        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t s = 0; s < options.max_subsets; ++s) {
            // Partial Fisher-Yates: the first kSubsetSize slots become the subset.
            for (std::size_t k = 0; k < kSubsetSize; ++k) {
                std::uniform_int_distribution<std::size_t> pick(k, n - 1);
                std::swap(pool[k], pool[pick(rng)]);
                idx[k] = pool[k];
            }
            solve_subset(idx);
        }
    }
    if (solutions[0].empty()) {
        throw Error(ErrorKind::Collinearity, "no non-degenerate row subset found for Theil-Sen");
    }

    Eigen::VectorXd w_std(kFeatures);
    for (int j = 0; j < kFeatures; ++j) w_std[j] = median_of(solutions[static_cast<std::size_t>(j)]);
    SohModel model;
    model.kind = EstimatorKind::TheilSen;
    standardizer.restore(w_std, median_of(solutions[kFeatures]), model.coefficients, model.intercept);
    model.validate();
    fill_meta(model, rows);
    return model;
}

SohModel train(std::span<const FeatureRow> rows, EstimatorKind kind, std::uint64_t seed) {
    switch (kind) {
        case EstimatorKind::Ols: return train_ols(rows);
        case EstimatorKind::Huber: return train_huber(rows);
        case EstimatorKind::TheilSen: return train_theil_sen(rows, TheilSenOptions{10000, seed});
    }
    throw Error(ErrorKind::Precondition, "unknown estimator kind");
}

double predict(const SohModel& model, const FeatureRow& row) {
    const std::array<double, 4> x{row.r1, row.r2, row.tau1, row.tau2};
    double y = model.intercept;
    for (std::size_t j = 0; j < x.size(); ++j) {
        if (!std::isfinite(x[j])) throw Error(ErrorKind::Domain, "cannot predict from a non-finite feature");
        y += model.coefficients[j] * x[j];
    }
    return y;
}

double mae(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size()) throw Error(ErrorKind::Precondition, "MAE inputs differ in length");
    if (predicted.empty()) throw Error(ErrorKind::Precondition, "MAE of empty lists is undefined");
    double sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) sum += std::abs(predicted[i] - actual[i]);
    return sum / static_cast<double>(predicted.size());
}

double r2(std::span<const double> predicted, std::span<const double> actual) {
    if (predicted.size() != actual.size()) throw Error(ErrorKind::Precondition, "R2 inputs differ in length");
    if (actual.size() < 2) throw Error(ErrorKind::Precondition, "R2 needs at least two points");
    const double mean = std::accumulate(actual.begin(), actual.end(), 0.0) / static_cast<double>(actual.size());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
        ss_res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        ss_tot += (actual[i] - mean) * (actual[i] - mean);
    }
    if (ss_tot == 0.0) throw Error(ErrorKind::Domain, "R2 is undefined when the actual values have no variance");
    return 1.0 - ss_res / ss_tot;
}

EvalReport evaluate(const SohModel& model, std::span<const FeatureRow> rows) {
    if (rows.empty()) throw Error(ErrorKind::Precondition, "nothing to evaluate");
    EvalReport report;
    std::map<BatteryId, std::pair<std::vector<double>, std::vector<double>>> by_battery;
    std::vector<double> all_pred, all_actual;
    for (const auto& row : rows) {
        const double p = predict(model, row);
        report.residuals.push_back({row.battery_id, row.cycle_index, p, row.soh_percent, p - row.soh_percent});
        by_battery[row.battery_id].first.push_back(p);
        by_battery[row.battery_id].second.push_back(row.soh_percent);
        all_pred.push_back(p);
        all_actual.push_back(row.soh_percent);
    }
    const auto safe_r2 = [](const std::vector<double>& p, const std::vector<double>& a) {
        try {
            return r2(p, a);
        } catch (const Error&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    report.mae_percent = mae(all_pred, all_actual);
    report.r2 = safe_r2(all_pred, all_actual);
    for (const auto& [id, pa] : by_battery) {
        BatteryMetrics m;
        m.mae_percent = mae(pa.first, pa.second);
        m.r2 = safe_r2(pa.first, pa.second);
        for (std::size_t i = 0; i < pa.first.size(); ++i) {
            m.max_abs_error_percent = std::max(m.max_abs_error_percent, std::abs(pa.first[i] - pa.second[i]));
        }
        report.per_battery[id] = m;
    }
    return report;
}

CrossBatteryResult cross_battery_eval(std::span<const FeatureRow> rows, const std::set<BatteryId>& train_ids,
                                      const std::set<BatteryId>& test_ids, EstimatorKind kind, std::uint64_t seed) {
    if (train_ids.empty() || test_ids.empty()) {
        throw Error(ErrorKind::Precondition, "train and test battery sets must be non-empty");
    }
    for (BatteryId id : train_ids) {
        if (test_ids.contains(id)) {
            throw Error(ErrorKind::Precondition, "battery " + std::to_string(id) + " is in both train and test sets");
        }
    }
    std::set<BatteryId> present;
    for (const auto& r : rows) present.insert(r.battery_id);
    for (const auto* ids : {&train_ids, &test_ids}) {
        for (BatteryId id : *ids) {
            if (!present.contains(id)) {
                throw Error(ErrorKind::UnknownBattery, "no feature rows for battery " + std::to_string(id));
            }
        }
    }

    std::vector<FeatureRow> train_rows, test_rows;
    for (const auto& r : rows) {
        if (train_ids.contains(r.battery_id)) train_rows.push_back(r);
        if (test_ids.contains(r.battery_id)) test_rows.push_back(r);
    }
    CrossBatteryResult result;
    result.model = train(train_rows, kind, seed);
    result.report = evaluate(result.model, test_rows);
    return result;
}

}  // namespace sohpulse
