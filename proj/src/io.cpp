#include "sohpulse/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "sohpulse/error.hpp"

namespace sohpulse::io {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return fields;
}

class CsvReader {
public:
    CsvReader(std::istream& in, std::string source, std::string_view header)
        : in_(in), source_(std::move(source)), columns_(split(header).size()) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (trim(line).empty()) continue;
            if (trim(line) != header) {
                throw Error(ErrorKind::Parse,
                            where() + ": expected header '" + std::string(header) + "', got '" +
                                std::string(trim(line)) + "'");
            }
            return;
        }
        throw Error(ErrorKind::Parse, source_ + ": missing header '" + std::string(header) + "'");
    }

    bool next() {
        while (std::getline(in_, line_)) {
            ++line_no_;
            if (trim(line_).empty()) continue;
            fields_ = split(line_);
            if (fields_.size() != columns_) {
                throw Error(ErrorKind::Parse, where() + ": expected " + std::to_string(columns_) + " fields, got " +
                                                  std::to_string(fields_.size()));
            }
            return true;
        }
        return false;
    }

    double number(std::size_t i) const { return parse_number(fields_[i], where()); }
    int integer(std::size_t i) const { return parse_int(fields_[i], where()); }
    bool flag(std::size_t i) const {
        const auto f = fields_[i];
        if (f == "1" || f == "true") return true;
        if (f == "0" || f == "false") return false;
        throw Error(ErrorKind::Parse, where() + ": expected 0/1, got '" + std::string(f) + "'");
    }
    std::string where() const { return source_ + ":" + std::to_string(line_no_); }

private:
    std::istream& in_;
    std::string source_;
    std::size_t columns_;
    std::string line_;
    std::vector<std::string_view> fields_;
    int line_no_ = 0;
};

void write_row(std::ostream& out, std::initializer_list<std::string> fields) {
    bool first = true;
    for (const auto& f : fields) {
        if (!first) out << ',';
        out << f;
        first = false;
    }
    out << '\n';
}

std::string num(double v) { return format_number(v); }
std::string num(int v) { return std::to_string(v); }

// JSON helpers: absent keys keep the current value; unknown keys are errors.
void check_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& what) {
    if (!obj.is_object()) throw Error(ErrorKind::Parse, what + " must be a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw Error(ErrorKind::Parse, what + ": unknown field '" + key + "'");
        }
    }
}

template <typename T>
void read_field(const json& obj, const char* key, T& target, const std::string& what) {
    if (!obj.contains(key)) return;
    try {
        target = obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, what + ": field '" + key + "': " + e.what());
    }
}

double json_number(const json& value) {
    if (value.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return value.get<double>();
}

json drift_to_json(const ParamDrift& d) { return {{"base", d.base}, {"slope", d.slope}, {"curvature", d.curvature}}; }

void drift_from_json(const json& obj, ParamDrift& d, const std::string& what) {
    check_keys(obj, {"base", "slope", "curvature"}, what);
    read_field(obj, "base", d.base, what);
    read_field(obj, "slope", d.slope, what);
    read_field(obj, "curvature", d.curvature, what);
}

}  // namespace

std::string format_number(double value) {
    char buf[64];
    const auto result = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, result.ptr);
}

double parse_number(std::string_view text, const std::string& context) {
    text = trim(text);
    double value = 0.0;
    const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || result.ec != std::errc() || result.ptr != text.data() + text.size()) {
        throw Error(ErrorKind::Parse, context + ": invalid number '" + std::string(text) + "'");
    }
    return value;
}

int parse_int(std::string_view text, const std::string& context) {
    text = trim(text);
    int value = 0;
    const auto result = std::from_chars(text.data(), text.data() + text.size(), value);
    if (text.empty() || result.ec != std::errc() || result.ptr != text.data() + text.size()) {
        throw Error(ErrorKind::Parse, context + ": invalid integer '" + std::string(text) + "'");
    }
    return value;
}

std::string trace_filename(BatteryId battery_id, int cycle_index) {
    return "b" + std::to_string(battery_id) + "_c" + std::to_string(cycle_index) + ".csv";
}

std::optional<std::pair<BatteryId, int>> parse_trace_filename(std::string_view filename) {
    if (filename.size() < 8 || filename.front() != 'b' || !filename.ends_with(".csv")) return std::nullopt;
    const auto stem = filename.substr(1, filename.size() - 5);
    const auto sep = stem.find("_c");
    if (sep == std::string_view::npos) return std::nullopt;
    const auto parse = [](std::string_view s) -> std::optional<int> {
        int v = 0;
        const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) return std::nullopt;
        return v;
    };
    const auto battery = parse(stem.substr(0, sep));
    const auto cycle = parse(stem.substr(sep + 2));
    if (!battery || !cycle) return std::nullopt;
    return std::pair{*battery, *cycle};
}

void write_trace_csv(std::ostream& out, const PulseTrace& trace) {
    out << kTraceHeader << '\n';
    for (const auto& s : trace.samples()) write_row(out, {num(s.t), num(s.current), num(s.voltage_delta)});
}

PulseTrace read_trace_csv(std::istream& in, const std::string& source, const TraceMeta& meta) {
    CsvReader csv(in, source, kTraceHeader);
    std::vector<PulseSample> samples;
    while (csv.next()) samples.push_back({csv.number(0), csv.number(1), csv.number(2)});
    try {
        return PulseTrace(std::move(samples), meta);
    } catch (const Error& e) {
        throw Error(ErrorKind::Parse, source + ": " + e.what());
    }
}

PulseTrace read_trace_file(const std::filesystem::path& path) {
    const auto key = parse_trace_filename(path.filename().string());
    if (!key) {
        throw Error(ErrorKind::Parse, path.string() + ": trace file name must look like b<battery>_c<cycle>.csv");
    }
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    return read_trace_csv(in, path.string(), TraceMeta{key->first, key->second, 21.0});
}

bool ParamsRow::fit_ok() const {
    const auto v = params.to_array();
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x) && x > 0.0; });
}

void write_params_csv(std::ostream& out, const std::vector<ParamsRow>& rows) {
    out << kParamsHeader << '\n';
    for (const auto& r : rows) {
        const auto& p = r.params;
        write_row(out, {num(r.battery_id), num(r.cycle_index), num(p.r_int), num(p.r1), num(p.tau1), num(p.r2),
                        num(p.tau2), num(r.sse), r.converged ? "1" : "0", num(r.residual_rms)});
    }
}

std::vector<ParamsRow> read_params_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kParamsHeader);
    std::vector<ParamsRow> rows;
    while (csv.next()) {
        ParamsRow r;
        r.battery_id = csv.integer(0);
        r.cycle_index = csv.integer(1);
        r.params = {csv.number(2), csv.number(3), csv.number(4), csv.number(5), csv.number(6)};
        r.sse = csv.number(7);
        r.converged = csv.flag(8);
        r.residual_rms = csv.number(9);
        rows.push_back(r);
    }
    return rows;
}

void write_cycles_csv(std::ostream& out, const std::vector<CycleEntry>& rows) {
    out << kCyclesHeader << '\n';
    for (const auto& r : rows) write_row(out, {num(r.battery_id), num(r.cycle_index), num(r.discharged_ah)});
}

std::vector<CycleEntry> read_cycles_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kCyclesHeader);
    std::vector<CycleEntry> rows;
    while (csv.next()) rows.push_back({csv.integer(0), csv.integer(1), csv.number(2)});
    return rows;
}

void write_corrections_csv(std::ostream& out, const std::vector<Correction>& rows) {
    out << kCorrectionsHeader << '\n';
    for (const auto& c : rows) {
        write_row(out, {num(c.battery_id), num(c.cycle_from), num(c.cycle_to), num(c.delta_ah)});
    }
}

std::vector<Correction> read_corrections_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kCorrectionsHeader);
    std::vector<Correction> rows;
    while (csv.next()) {
        Correction c{csv.integer(0), csv.integer(1), csv.integer(2), csv.number(3)};
        if (c.cycle_from > c.cycle_to) throw Error(ErrorKind::Parse, csv.where() + ": cycle_from > cycle_to");
        rows.push_back(c);
    }
    return rows;
}

void write_features_csv(std::ostream& out, const std::vector<FeatureRow>& rows) {
    out << kFeaturesHeader << '\n';
    for (const auto& r : rows) {
        write_row(out, {num(r.battery_id), num(r.cycle_index), num(r.r1), num(r.r2), num(r.tau1), num(r.tau2),
                        num(r.soh_percent)});
    }
}

std::vector<FeatureRow> read_features_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kFeaturesHeader);
    std::vector<FeatureRow> rows;
    while (csv.next()) {
        FeatureRow r{csv.number(2), csv.number(3), csv.number(4), csv.number(5),
                     csv.number(6), csv.integer(0), csv.integer(1)};
        try {
            r.validate();
        } catch (const Error& e) {
            throw Error(ErrorKind::Parse, csv.where() + ": " + e.what());
        }
        rows.push_back(r);
    }
    return rows;
}

void write_ground_truth_csv(std::ostream& out, const std::vector<CycleRecord>& records) {
    out << kGroundTruthHeader << '\n';
    for (const auto& r : records) {
        const auto& p = r.params;
        write_row(out, {num(r.battery_id), num(r.cycle_index), num(p.r_int), num(p.r1), num(p.tau1), num(p.r2),
                        num(p.tau2), num(r.soh_percent.value_or(std::numeric_limits<double>::quiet_NaN())),
                        num(r.discharged_ah)});
    }
}

std::vector<CycleRecord> read_ground_truth_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kGroundTruthHeader);
    std::vector<CycleRecord> rows;
    while (csv.next()) {
        CycleRecord r;
        r.battery_id = csv.integer(0);
        r.cycle_index = csv.integer(1);
        r.params = {csv.number(2), csv.number(3), csv.number(4), csv.number(5), csv.number(6)};
        const double soh = csv.number(7);
        if (!std::isnan(soh)) r.soh_percent = soh;
        r.discharged_ah = csv.number(8);
        rows.push_back(r);
    }
    return rows;
}

void write_report_csv(std::ostream& out, const EvalReport& report) {
    out << kReportHeader << '\n';
    for (const auto& [id, m] : report.per_battery) {
        write_row(out, {num(id), num(m.mae_percent), num(m.r2), num(m.max_abs_error_percent)});
    }
}

std::map<BatteryId, BatteryMetrics> read_report_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kReportHeader);
    std::map<BatteryId, BatteryMetrics> rows;
    while (csv.next()) {
        const BatteryId id = csv.integer(0);
        if (!rows.emplace(id, BatteryMetrics{csv.number(1), csv.number(2), csv.number(3)}).second) {
            throw Error(ErrorKind::DuplicateKey, csv.where() + ": battery " + std::to_string(id) + " listed twice");
        }
    }
    return rows;
}

void write_residuals_csv(std::ostream& out, const EvalReport& report) {
    out << kResidualsHeader << '\n';
    for (const auto& r : report.residuals) {
        write_row(out, {num(r.battery_id), num(r.cycle_index), num(r.predicted), num(r.actual), num(r.error)});
    }
}

std::vector<Residual> read_residuals_csv(std::istream& in, const std::string& source) {
    CsvReader csv(in, source, kResidualsHeader);
    std::vector<Residual> rows;
    while (csv.next()) {
        rows.push_back({csv.integer(0), csv.integer(1), csv.number(2), csv.number(3), csv.number(4)});
    }
    return rows;
}

json model_to_json(const SohModel& model) {
    json names = json::array();
    for (auto n : kFeatureNames) names.push_back(std::string(n));
    const auto& meta = model.training_meta;
    // NaN (undefined train R2) is written as null.
    return {
        {"kind", std::string(to_string(model.kind))},
        {"feature_names", names},
        {"coefficients", model.coefficients},
        {"intercept", model.intercept},
        {"training_meta",
         {{"battery_ids", meta.battery_ids},
          {"row_count", meta.row_count},
          {"train_mae", meta.train_mae},
          {"train_r2", meta.train_r2}}},
        {"format_version", kModelFormatVersion},
    };
}

SohModel model_from_json(const json& doc) {
    try {
        if (doc.at("format_version").get<int>() != kModelFormatVersion) {
            throw Error(ErrorKind::Parse, "unsupported model format_version " + doc.at("format_version").dump());
        }
        const auto names = doc.at("feature_names").get<std::vector<std::string>>();
        if (names.size() != kFeatureNames.size() || !std::equal(names.begin(), names.end(), kFeatureNames.begin())) {
            throw Error(ErrorKind::Parse, "model feature_names must be [\"r1\",\"r2\",\"tau1\",\"tau2\"]");
        }
        SohModel model;
        model.kind = estimator_kind_from_string(doc.at("kind").get<std::string>());
        const auto& coeffs = doc.at("coefficients");
        if (!coeffs.is_array() || coeffs.size() != 4) throw Error(ErrorKind::Parse, "model needs 4 coefficients");
        for (std::size_t j = 0; j < 4; ++j) model.coefficients[j] = json_number(coeffs[j]);
        model.intercept = json_number(doc.at("intercept"));
        const auto& meta = doc.at("training_meta");
        model.training_meta.battery_ids = meta.at("battery_ids").get<std::vector<BatteryId>>();
        model.training_meta.row_count = meta.at("row_count").get<std::size_t>();
        model.training_meta.train_mae = json_number(meta.at("train_mae"));
        model.training_meta.train_r2 = json_number(meta.at("train_r2"));
        model.validate();
        return model;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Parse, std::string("malformed model JSON: ") + e.what());
    }
}

std::vector<BatterySpec> specs_from_json(const json& doc) {
    if (!doc.is_array()) throw Error(ErrorKind::Parse, "battery spec file must hold a JSON array");
    std::vector<BatterySpec> specs;
    std::set<BatteryId> seen;
    for (const auto& obj : doc) {
        const std::string what = "battery spec #" + std::to_string(specs.size() + 1);
        check_keys(obj,
                   {"battery_id", "nominal_ah", "pulse_current", "pulse_duration", "sample_rate", "burn_in_cycles",
                    "n_cycles", "ambient_temp_celsius", "end_soh"},
                   what);
        BatterySpec s;
        read_field(obj, "battery_id", s.battery_id, what);
        read_field(obj, "nominal_ah", s.nominal_ah, what);
        read_field(obj, "pulse_current", s.pulse_current, what);
        read_field(obj, "pulse_duration", s.pulse_duration, what);
        read_field(obj, "sample_rate", s.sample_rate, what);
        read_field(obj, "n_cycles", s.n_cycles, what);
        read_field(obj, "ambient_temp_celsius", s.ambient_temp_celsius, what);
        if (obj.contains("burn_in_cycles") && !obj["burn_in_cycles"].is_null()) {
            int v = 0;
            read_field(obj, "burn_in_cycles", v, what);
            s.burn_in_cycles = v;
        }
        if (obj.contains("end_soh") && !obj["end_soh"].is_null()) {
            double v = 0.0;
            read_field(obj, "end_soh", v, what);
            s.end_soh = v;
        }
        if (!seen.insert(s.battery_id).second) {
            throw Error(ErrorKind::DuplicateKey, "battery " + std::to_string(s.battery_id) + " specified twice");
        }
        specs.push_back(s);
    }
    return specs;
}

json specs_to_json(const std::vector<BatterySpec>& specs) {
    json doc = json::array();
    for (const auto& s : specs) {
        json obj = {{"battery_id", s.battery_id},
                    {"nominal_ah", s.nominal_ah},
                    {"pulse_current", s.pulse_current},
                    {"pulse_duration", s.pulse_duration},
                    {"sample_rate", s.sample_rate},
                    {"n_cycles", s.n_cycles},
                    {"ambient_temp_celsius", s.ambient_temp_celsius}};
        obj["burn_in_cycles"] = s.burn_in_cycles ? json(*s.burn_in_cycles) : json(nullptr);
        obj["end_soh"] = s.end_soh ? json(*s.end_soh) : json(nullptr);
        doc.push_back(obj);
    }
    return doc;
}

DriftProfile profile_from_json(const json& doc) {
    DriftProfile p = default_paper_profile();
    check_keys(doc, {"r_int", "r1", "tau1", "r2", "tau2", "fade", "noise"}, "profile");
    const std::pair<const char*, ParamDrift*> drifts[] = {
        {"r_int", &p.r_int}, {"r1", &p.r1}, {"tau1", &p.tau1}, {"r2", &p.r2}, {"tau2", &p.tau2}};
    for (const auto& [key, target] : drifts) {
        if (doc.contains(key)) drift_from_json(doc[key], *target, std::string("profile.") + key);
    }
    if (doc.contains("fade")) {
        const auto& f = doc["fade"];
        check_keys(f, {"shape", "end_soh", "burn_in_depth", "exponential_rate"}, "profile.fade");
        if (f.contains("shape")) {
            const auto shape = f["shape"].get<std::string>();
            if (shape == "linear") {
                p.fade.shape = FadeShape::Linear;
            } else if (shape == "exponential") {
                p.fade.shape = FadeShape::Exponential;
            } else {
                throw Error(ErrorKind::Parse, "profile.fade.shape must be 'linear' or 'exponential'");
            }
        }
        read_field(f, "end_soh", p.fade.end_soh, "profile.fade");
        read_field(f, "burn_in_depth", p.fade.burn_in_depth, "profile.fade");
        read_field(f, "exponential_rate", p.fade.exponential_rate, "profile.fade");
    }
    if (doc.contains("noise")) {
        const auto& n = doc["noise"];
        check_keys(n, {"voltage_sigma", "capacity_sigma", "param_jitter", "cell_spread"}, "profile.noise");
        read_field(n, "voltage_sigma", p.noise.voltage_sigma, "profile.noise");
        read_field(n, "capacity_sigma", p.noise.capacity_sigma, "profile.noise");
        read_field(n, "param_jitter", p.noise.param_jitter, "profile.noise");
        read_field(n, "cell_spread", p.noise.cell_spread, "profile.noise");
    }
    return p;
}

json profile_to_json(const DriftProfile& p) {
    return {
        {"r_int", drift_to_json(p.r_int)},
        {"r1", drift_to_json(p.r1)},
        {"tau1", drift_to_json(p.tau1)},
        {"r2", drift_to_json(p.r2)},
        {"tau2", drift_to_json(p.tau2)},
        {"fade",
         {{"shape", p.fade.shape == FadeShape::Linear ? "linear" : "exponential"},
          {"end_soh", p.fade.end_soh},
          {"burn_in_depth", p.fade.burn_in_depth},
          {"exponential_rate", p.fade.exponential_rate}}},
        {"noise",
         {{"voltage_sigma", p.noise.voltage_sigma},
          {"capacity_sigma", p.noise.capacity_sigma},
          {"param_jitter", p.noise.param_jitter},
          {"cell_spread", p.noise.cell_spread}}},
    };
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << contents;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace sohpulse::io
