#include "sohpulse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "sohpulse/error.hpp"

namespace sohpulse {

namespace {

// Indices of records grouped per battery, each group in input order.
std::map<BatteryId, std::vector<std::size_t>> group_by_battery(std::span<const CycleRecord> records) {
    std::map<BatteryId, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].battery_id].push_back(i);
    return groups;
}

void require_sorted(std::span<const CycleRecord> records,
                    const std::map<BatteryId, std::vector<std::size_t>>& groups) {
    for (const auto& [id, idx] : groups) {
        for (std::size_t k = 1; k < idx.size(); ++k) {
            if (!(records[idx[k]].cycle_index > records[idx[k - 1]].cycle_index)) {
                std::ostringstream msg;
                msg << "cycle indices of battery " << id << " are not strictly increasing at cycle "
                    << records[idx[k]].cycle_index;
                throw Error(ErrorKind::Precondition, msg.str());
            }
        }
    }
}

}  // namespace

void FeatureRow::validate() const {
    for (double v : {r1, r2, tau1, tau2}) {
        if (!std::isfinite(v) || v <= 0.0) {
            throw Error(ErrorKind::Domain, "feature values must be finite and positive (battery " +
                                               std::to_string(battery_id) + ", cycle " +
                                               std::to_string(cycle_index) + ")");
        }
    }
    if (!std::isfinite(soh_percent) || soh_percent <= 0.0 || soh_percent > 110.0) {
        throw Error(ErrorKind::Domain, "SoH label outside (0, 110] (battery " + std::to_string(battery_id) +
                                           ", cycle " + std::to_string(cycle_index) + ")");
    }
}

std::vector<CycleRecord> apply_corrections(std::span<const CycleRecord> records,
                                           std::span<const Correction> corrections) {
    std::set<BatteryId> known;
    for (const auto& r : records) known.insert(r.battery_id);
    for (const auto& c : corrections) {
        if (c.cycle_from > c.cycle_to) {
            throw Error(ErrorKind::InvalidCorrection, "correction range for battery " +
                                                          std::to_string(c.battery_id) + " is reversed");
        }
        if (!known.contains(c.battery_id)) {
            throw Error(ErrorKind::UnknownBattery,
                        "correction references unknown battery " + std::to_string(c.battery_id));
        }
    }

    std::vector<CycleRecord> out(records.begin(), records.end());
    for (auto& r : out) {
        for (const auto& c : corrections) {
            if (c.battery_id != r.battery_id || r.cycle_index < c.cycle_from || r.cycle_index > c.cycle_to) {
                continue;
            }
            r.discharged_ah += c.delta_ah;
        }
        const bool touched = std::any_of(corrections.begin(), corrections.end(), [&](const Correction& c) {
            return c.battery_id == r.battery_id && r.cycle_index >= c.cycle_from && r.cycle_index <= c.cycle_to;
        });
        if (touched && !(r.discharged_ah > 0.0)) {
            std::ostringstream msg;
            msg << "correction leaves battery " << r.battery_id << " cycle " << r.cycle_index
                << " with non-positive capacity " << r.discharged_ah << " Ah";
            throw Error(ErrorKind::InvalidCorrection, msg.str());
        }
    }
    return out;
}

std::vector<CycleRecord> compute_soh(std::span<const CycleRecord> records, const SohReference& reference) {
    if (const auto* fixed = std::get_if<double>(&reference); fixed && !(*fixed > 0.0)) {
        throw Error(ErrorKind::Domain, "SoH reference capacity must be positive");
    }
    std::map<BatteryId, double> max_ah;
    for (const auto& r : records) {
        auto [it, inserted] = max_ah.try_emplace(r.battery_id, r.discharged_ah);
        if (!inserted) it->second = std::max(it->second, r.discharged_ah);
    }

    std::vector<CycleRecord> out(records.begin(), records.end());
    for (auto& r : out) {
        const double ref = std::holds_alternative<double>(reference) ? std::get<double>(reference)
                                                                     : max_ah.at(r.battery_id);
        if (!(ref > 0.0)) {
            throw Error(ErrorKind::Domain, "battery " + std::to_string(r.battery_id) +
                                               " has no positive capacity to use as SoH reference");
        }
        r.soh_percent = 100.0 * r.discharged_ah / ref;
    }
    return out;
}

std::vector<CycleRecord> trim_burn_in(std::span<const CycleRecord> records) {
    const auto groups = group_by_battery(records);
    require_sorted(records, groups);

    std::vector<bool> keep(records.size(), false);
    for (const auto& [id, idx] : groups) {
        std::size_t peak = 0;
        for (std::size_t k = 1; k < idx.size(); ++k) {
            if (records[idx[k]].discharged_ah > records[idx[peak]].discharged_ah) peak = k;
        }
        for (std::size_t k = peak; k < idx.size(); ++k) keep[idx[k]] = true;
    }

    std::vector<CycleRecord> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (keep[i]) out.push_back(records[i]);
    }
    return out;
}

std::vector<double> sliding_mean(std::span<const double> series, int window) {
    if (window < 1) throw Error(ErrorKind::Precondition, "sliding mean window must be >= 1");
    const auto w = static_cast<std::size_t>(window);
    std::vector<double> out(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        const std::size_t first = i + 1 >= w ? i + 1 - w : 0;
        // Offsets from the window's first value keep a constant series exact.
        const double anchor = series[first];
        double sum = 0.0;
        for (std::size_t k = first; k <= i; ++k) sum += series[k] - anchor;
        out[i] = anchor + sum / static_cast<double>(i - first + 1);
    }
    return out;
}

std::vector<FeatureRow> build_features(std::span<const CycleRecord> records, int window) {
    if (window < 1) throw Error(ErrorKind::Precondition, "sliding mean window must be >= 1");
    for (const auto& r : records) {
        if (!r.soh_percent) {
            throw Error(ErrorKind::Precondition, "record for battery " + std::to_string(r.battery_id) +
                                                     " cycle " + std::to_string(r.cycle_index) +
                                                     " has no SoH label");
        }
    }
    const auto groups = group_by_battery(records);
    require_sorted(records, groups);

    std::vector<FeatureRow> out(records.size());
    for (const auto& [id, idx] : groups) {
        const auto column = [&](auto field) {
            std::vector<double> values;
            values.reserve(idx.size());
            for (std::size_t i : idx) values.push_back(field(records[i]));
            return sliding_mean(values, window);
        };
        const auto r1 = column([](const CycleRecord& r) { return r.params.r1; });
        const auto r2 = column([](const CycleRecord& r) { return r.params.r2; });
        const auto tau1 = column([](const CycleRecord& r) { return r.params.tau1; });
        const auto tau2 = column([](const CycleRecord& r) { return r.params.tau2; });
        const auto soh = column([](const CycleRecord& r) { return *r.soh_percent; });
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& rec = records[idx[k]];
            FeatureRow row{r1[k], r2[k], tau1[k], tau2[k], soh[k], rec.battery_id, rec.cycle_index};
            row.validate();
            out[idx[k]] = row;
        }
    }
    return out;
}

}  // namespace sohpulse
