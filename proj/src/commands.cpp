#include "sohpulse/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "sohpulse/error.hpp"
#include "sohpulse/simbench.hpp"

namespace sohpulse::cli {

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

using Key = std::pair<BatteryId, int>;

std::string key_text(const Key& k) {
    return "(battery " + std::to_string(k.first) + ", cycle " + std::to_string(k.second) + ")";
}

template <typename Write>
void write_output(const fs::path& path, Write&& write) {
    std::ostringstream buf;
    write(buf);
    io::write_text_file(path, buf.str());
}

template <typename Read>
auto read_input(const fs::path& path, Read&& read) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    return read(in, path.string());
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
    std::vector<fs::path> files;
    for (const auto& p : inputs) {
        if (!fs::is_directory(p)) {
            files.push_back(p);
            continue;
        }
        std::vector<fs::path> found;
        for (const auto& entry : fs::directory_iterator(p)) {
            if (entry.is_regular_file() && io::parse_trace_filename(entry.path().filename().string())) {
                found.push_back(entry.path());
            }
        }
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
    }
    return files;
}

io::ParamsRow failed_row(const Key& key) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    return {key.first, key.second, EcmParams{nan, nan, nan, nan, nan}, nan, false, nan};
}

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
    try {
        return body();
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

}  // namespace

std::vector<CycleRecord> join_records(const std::vector<io::ParamsRow>& params,
                                      const std::vector<io::CycleEntry>& cycles, std::ostream& err) {
    std::map<Key, double> capacity;
    for (const auto& c : cycles) {
        if (!capacity.emplace(Key{c.battery_id, c.cycle_index}, c.discharged_ah).second) {
            throw Error(ErrorKind::DuplicateKey, "cycles file lists " + key_text({c.battery_id, c.cycle_index}) +
                                                     " twice");
        }
    }

    std::map<Key, const io::ParamsRow*> fitted;
    std::vector<Key> orphans;
    for (const auto& p : params) {
        const Key key{p.battery_id, p.cycle_index};
        if (!fitted.emplace(key, &p).second) {
            throw Error(ErrorKind::DuplicateKey, "params file lists " + key_text(key) + " twice");
        }
        if (!capacity.contains(key)) orphans.push_back(key);
    }
    if (!orphans.empty()) {
        std::string list;
        for (const auto& k : orphans) list += (list.empty() ? "" : ", ") + key_text(k);
        throw Error(ErrorKind::JoinMismatch, "params rows without a cycles entry: " + list);
    }

    std::vector<CycleRecord> records;
    std::size_t skipped = 0;
    for (const auto& [key, row] : fitted) {
        if (!row->fit_ok()) {
            ++skipped;
            continue;
        }
        records.push_back({key.first, key.second, capacity.at(key), row->params, std::nullopt});
    }
    if (skipped > 0) err << "note: skipped " << skipped << " cycle(s) whose fit failed\n";
    if (const auto unfitted = capacity.size() - fitted.size(); unfitted > 0) {
        err << "note: " << unfitted << " cycle(s) have no fitted parameters and were dropped\n";
    }
    return records;
}

int cmd_fit(const FitConfig& config, std::ostream& out, std::ostream& err) {
    if (config.inputs.empty()) {
        err << "usage error: fit needs at least one trace file\n";
        return kExitUsage;
    }
    return guarded(err, [&] {
        config.options.validate();
        const auto files = expand_inputs(config.inputs);
        if (files.empty()) {
            err << "usage error: no trace files found in the given inputs\n";
            return kExitUsage;
        }

        bool failed = false;
        std::vector<std::optional<PulseTrace>> traces;
        std::map<Key, fs::path> seen;
        for (const auto& f : files) {
            try {
                PulseTrace trace = io::read_trace_file(f);
                const Key key{trace.meta().battery_id, trace.meta().cycle_index};
                if (const auto [it, inserted] = seen.emplace(key, f); !inserted) {
                    throw Error(ErrorKind::DuplicateKey, "duplicate trace " + key_text(key) + " in " + f.string() +
                                                             " and " + it->second.string());
                }
                traces.emplace_back(std::move(trace));
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::DuplicateKey) throw;
                err << "error: " << e.what() << '\n';
                failed = true;
            }
        }

        // Each worker writes only its own slot, so completion order never shows.
        std::vector<io::ParamsRow> rows(traces.size());
        std::vector<std::string> diagnostics(traces.size());
        std::atomic<std::size_t> next{0};
        const auto worker = [&] {
            for (std::size_t i = next++; i < traces.size(); i = next++) {
                const auto& trace = *traces[i];
                const Key key{trace.meta().battery_id, trace.meta().cycle_index};
                try {
                    const FitReport r = fit_pulse(trace, config.options);
                    rows[i] = {key.first, key.second, r.params, r.sse, r.converged, r.residual_rms};
                } catch (const Error& e) {
                    rows[i] = failed_row(key);
                    diagnostics[i] = "error: fit failed for " + key_text(key) + ": " + e.what();
                }
            }
        };
        const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(traces.size())));
        {
            std::vector<std::jthread> pool;
            for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
            worker();
        }
        for (const auto& d : diagnostics) {
            if (d.empty()) continue;
            err << d << '\n';
            failed = true;
        }

        std::sort(rows.begin(), rows.end(), [](const io::ParamsRow& a, const io::ParamsRow& b) {
            return std::tie(a.battery_id, a.cycle_index) < std::tie(b.battery_id, b.cycle_index);
        });
        write_output(config.output, [&](std::ostream& o) { io::write_params_csv(o, rows); });
        const auto converged = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.converged; });
        out << "fitted " << rows.size() << " trace(s), " << converged << " converged -> " << config.output.string()
            << '\n';
        return failed ? kExitError : 0;
    });
}

int cmd_pipeline(const PipelineConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto params = read_input(config.params, io::read_params_csv);
        const auto cycles = read_input(config.cycles, io::read_cycles_csv);
        std::vector<Correction> corrections;
        if (config.corrections) corrections = read_input(*config.corrections, io::read_corrections_csv);

        auto records = join_records(params, cycles, err);
        records = apply_corrections(records, corrections);
        records = compute_soh(records, config.reference);
        records = trim_burn_in(records);
        const auto features = build_features(records, config.window);

        write_output(config.output, [&](std::ostream& o) { io::write_features_csv(o, features); });
        out << "wrote " << features.size() << " feature row(s) -> " << config.output.string() << '\n';
        return 0;
    });
}

int cmd_train(const TrainConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (config.train_ids.empty()) throw Error(ErrorKind::Precondition, "train needs at least one battery id");
        const auto rows = read_input(config.features, io::read_features_csv);
        std::set<BatteryId> present;
        std::vector<FeatureRow> train_rows;
        for (const auto& r : rows) {
            present.insert(r.battery_id);
            if (config.train_ids.contains(r.battery_id)) train_rows.push_back(r);
        }
        for (BatteryId id : config.train_ids) {
            if (!present.contains(id)) {
                throw Error(ErrorKind::UnknownBattery, "no feature rows for battery " + std::to_string(id));
            }
        }
        const SohModel model = train(train_rows, config.kind, config.seed);
        io::write_text_file(config.model, io::model_to_json(model).dump(2) + "\n");
        out << to_string(model.kind) << " model on " << model.training_meta.row_count << " rows: train MAE "
            << model.training_meta.train_mae << " %, R2 " << model.training_meta.train_r2 << " -> "
            << config.model.string() << '\n';
        return 0;
    });
}

int cmd_eval(const EvalConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (config.test_ids.empty()) throw Error(ErrorKind::Precondition, "eval needs at least one battery id");
        const SohModel model = io::model_from_json(nlohmann::json::parse(io::read_text_file(config.model)));
        for (BatteryId id : model.training_meta.battery_ids) {
            if (config.test_ids.contains(id)) {
                throw Error(ErrorKind::Precondition,
                            "battery " + std::to_string(id) + " was used to train the model; test ids must be disjoint");
            }
        }
        const auto rows = read_input(config.features, io::read_features_csv);
        std::vector<FeatureRow> test_rows;
        std::set<BatteryId> present;
        for (const auto& r : rows) {
            if (!config.test_ids.contains(r.battery_id)) continue;
            present.insert(r.battery_id);
            test_rows.push_back(r);
        }
        for (BatteryId id : config.test_ids) {
            if (!present.contains(id)) {
                throw Error(ErrorKind::UnknownBattery, "no feature rows for battery " + std::to_string(id));
            }
        }

        const EvalReport report = evaluate(model, test_rows);
        write_output(config.report, [&](std::ostream& o) { io::write_report_csv(o, report); });
        if (config.residuals) {
            write_output(*config.residuals, [&](std::ostream& o) { io::write_residuals_csv(o, report); });
        }
        for (const auto& [id, m] : report.per_battery) {
            out << "battery " << id << ": MAE " << std::fixed << std::setprecision(3) << m.mae_percent << " %, R2 "
                << m.r2 << ", max |error| " << m.max_abs_error_percent << " %\n";
        }
        out.unsetf(std::ios::fixed);
        return 0;
    });
}

int cmd_simulate(const SimulateConfig& config, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const auto specs = config.spec
                               ? io::specs_from_json(nlohmann::json::parse(io::read_text_file(*config.spec)))
                               : default_paper_campaign();
        const DriftProfile profile =
            config.profile ? io::profile_from_json(nlohmann::json::parse(io::read_text_file(*config.profile)))
                           : default_paper_profile();
        const Campaign campaign = simulate_campaign(specs, profile, config.seed);

        const fs::path traces_dir = config.out_dir / "traces";
        fs::create_directories(traces_dir);
        for (const auto& trace : campaign.traces) {
            write_output(traces_dir / io::trace_filename(trace.meta().battery_id, trace.meta().cycle_index),
                         [&](std::ostream& o) { io::write_trace_csv(o, trace); });
        }
        std::vector<io::CycleEntry> cycles;
        for (const auto& r : campaign.records) cycles.push_back({r.battery_id, r.cycle_index, r.discharged_ah});
        write_output(config.out_dir / "cycles.csv", [&](std::ostream& o) { io::write_cycles_csv(o, cycles); });
        write_output(config.out_dir / "ground_truth.csv",
                     [&](std::ostream& o) { io::write_ground_truth_csv(o, campaign.records); });

        out << "simulated " << specs.size() << " batter" << (specs.size() == 1 ? "y" : "ies") << ", "
            << campaign.records.size() << " cycle(s) -> " << config.out_dir.string() << '\n';
        return 0;
    });
}

}  // namespace sohpulse::cli
