#include "crossflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crossflow/topology.hpp"
#include "crossflow/util.hpp"

namespace crossflow {

namespace {

double poly_rate(const std::array<double, 6>& c, double v, double a) {
    const double raw = c[0] + c[1] * v + c[2] * v * v + c[3] * v * v * v + c[4] * v * a +
                       c[5] * v * a * a;
    return raw > 0.0 ? raw : 0.0;
}

}  // namespace

double emission_rate(const EmissionClassCoeffs& c, double v, double a) {
    return poly_rate(c.co2, v, a);
}

double fuel_rate(const EmissionClassCoeffs& c, double v, double a) {
    return poly_rate(c.fuel, v, a);
}

EmissionModel EmissionModel::builtin_defaults() {
    EmissionModel m;
    EmissionClassCoeffs light;
    light.class_id = "light_gasoline";
    light.co2 = {2400.0, 0.0, 0.9, 0.028, 260.0, 18.0};
    for (int i = 0; i < 6; ++i) light.fuel[i] = light.co2[i] / 2320.0;  // mg CO2 per ml gasoline

    EmissionClassCoeffs heavy;
    heavy.class_id = "heavy_diesel";
    heavy.co2 = {6200.0, 0.0, 2.6, 0.08, 700.0, 50.0};
    for (int i = 0; i < 6; ++i) heavy.fuel[i] = heavy.co2[i] / 2640.0;  // mg CO2 per ml diesel

    m.classes_[light.class_id] = light;
    m.classes_[heavy.class_id] = heavy;
    return m;
}

EmissionModel EmissionModel::from_config(const std::string& text) {
    EmissionModel m;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    EmissionClassCoeffs cur;
    bool open = false, have_co2 = false, have_fuel = false;
    auto flush = [&]() {
        if (!open) return;
        if (!have_co2 || !have_fuel)
            throw ConfigError("emission class '" + cur.class_id + "' is missing a co2 or fuel line");
        m.classes_[cur.class_id] = cur;
        open = have_co2 = have_fuel = false;
    };
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::istringstream ls(raw);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "class") {
            flush();
            if (!(ls >> cur.class_id)) throw ConfigError("class line needs an id", lineno);
            open = true;
        } else if (key == "co2" || key == "fuel") {
            if (!open) throw ConfigError("'" + key + "' before any class line", lineno);
            std::array<double, 6> c;
            for (double& x : c)
                if (!(ls >> x)) throw ConfigError("'" + key + "' line needs 6 coefficients", lineno);
            (key == "co2" ? cur.co2 : cur.fuel) = c;
            (key == "co2" ? have_co2 : have_fuel) = true;
        } else {
            throw ConfigError("unknown emission config key '" + key + "'", lineno);
        }
    }
    flush();
    if (m.classes_.empty()) throw ConfigError("emission config defines no classes");
    return m;
}

std::string EmissionModel::to_config() const {
    std::ostringstream out;
    out << "# crossflow emission coefficients v1\n";
    out << "# rate(v,a) = max(0, c0 + c1*v + c2*v^2 + c3*v^3 + c4*v*a + c5*v*a^2)\n";
    out << "# co2 in mg/s, fuel in ml/s\n";
    for (const auto& [id, c] : classes_) {
        out << "class " << id << "\n";
        out << "co2";
        for (double x : c.co2) out << " " << fmt_double(x);
        out << "\nfuel";
        for (double x : c.fuel) out << " " << fmt_double(x);
        out << "\n";
    }
    return out.str();
}

const EmissionClassCoeffs& EmissionModel::coeffs(const std::string& class_id) const {
    const auto it = classes_.find(class_id);
    if (it == classes_.end()) throw ConfigError("unknown emission class '" + class_id + "'");
    return it->second;
}

double EmissionModel::co2_rate(const std::string& class_id, double v, double a) const {
    return emission_rate(coeffs(class_id), v, a);
}

double EmissionModel::fuel_rate(const std::string& class_id, double v, double a) const {
    return crossflow::fuel_rate(coeffs(class_id), v, a);
}

MeanResult avg_waiting_time(std::span<const CompletedRecord> records,
                            std::optional<int> type_filter) {
    MeanResult r;
    double sum = 0.0;
    for (const auto& rec : records) {
        if (type_filter && rec.type != *type_filter) continue;
        sum += rec.waiting_time;
        ++r.n;
    }
    r.value = r.n ? sum / static_cast<double>(r.n) : 0.0;
    return r;
}

std::vector<HeadwayObservation> headways_from_lane(std::span<const double> positions,
                                                   std::span<const int> types) {
    std::vector<HeadwayObservation> out;
    if (positions.size() < 2) return out;
    std::vector<std::size_t> order(positions.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return positions[a] < positions[b]; });
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const std::size_t follower = order[i], leader = order[i + 1];
        out.push_back({types.empty() ? 0 : types[follower], positions[leader] - positions[follower]});
    }
    return out;
}

MeanResult avg_space_headway(std::span<const HeadwayObservation> samples,
                             std::optional<int> type_filter) {
    MeanResult r;
    double sum = 0.0;
    for (const auto& h : samples) {
        if (type_filter && h.follower_type != *type_filter) continue;
        sum += h.headway;
        ++r.n;
    }
    r.value = r.n ? sum / static_cast<double>(r.n) : 0.0;
    return r;
}

std::vector<ReportRow> summarize_run(const std::string& run_id, double rv_rate,
                                     const std::string& scope,
                                     std::span<const CompletedRecord> completed,
                                     std::span<const HeadwayObservation> headways,
                                     const std::vector<VehicleType>& types) {
    std::vector<ReportRow> rows;
    auto make_row = [&](const std::string& type_name, std::optional<int> f) {
        ReportRow row;
        row.run_id = run_id;
        row.rv_rate = rv_rate;
        row.scope = scope;
        row.vehicle_type = type_name;
        const auto w = avg_waiting_time(completed, f);
        row.w_avg = w.value;
        row.n = w.n;
        double co2 = 0, fuel = 0;
        std::size_t n = 0;
        for (const auto& rec : completed) {
            if (f && rec.type != *f) continue;
            co2 += rec.co2_rate();
            fuel += rec.fuel_rate();
            ++n;
        }
        row.co2_mg_s = n ? co2 / static_cast<double>(n) : 0.0;
        row.fuel_ml_s = n ? fuel / static_cast<double>(n) : 0.0;
        row.headway_m = avg_space_headway(headways, f).value;
        return row;
    };
    for (std::size_t t = 0; t < types.size(); ++t)
        rows.push_back(make_row(types[t].name, static_cast<int>(t)));
    rows.push_back(make_row("all", std::nullopt));
    return rows;
}

std::vector<ReportRow> aggregate_rows(std::span<const ReportRow> per_run_rows) {
    // key: (rv_rate, scope, vehicle_type), preserving first-seen order
    std::vector<ReportRow> out;
    std::vector<std::size_t> counts;     // runs contributing
    std::vector<double> headway_w;       // headway accumulators (simple mean over runs)
    for (const auto& r : per_run_rows) {
        std::size_t idx = out.size();
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i].rv_rate == r.rv_rate && out[i].scope == r.scope &&
                out[i].vehicle_type == r.vehicle_type) {
                idx = i;
                break;
            }
        if (idx == out.size()) {
            ReportRow blank = r;
            blank.run_id = "mean";
            blank.w_avg = blank.co2_mg_s = blank.fuel_ml_s = blank.headway_m = 0.0;
            blank.n = 0;
            out.push_back(blank);
            counts.push_back(0);
            headway_w.push_back(0.0);
        }
        // waiting/emission means weighted by vehicle count; headway by run
        out[idx].w_avg += r.w_avg * static_cast<double>(r.n);
        out[idx].co2_mg_s += r.co2_mg_s * static_cast<double>(r.n);
        out[idx].fuel_ml_s += r.fuel_ml_s * static_cast<double>(r.n);
        out[idx].n += r.n;
        headway_w[idx] += r.headway_m;
        counts[idx] += 1;
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i].n > 0) {
            out[i].w_avg /= static_cast<double>(out[i].n);
            out[i].co2_mg_s /= static_cast<double>(out[i].n);
            out[i].fuel_ml_s /= static_cast<double>(out[i].n);
        }
        if (counts[i] > 0) out[i].headway_m = headway_w[i] / static_cast<double>(counts[i]);
    }
    return out;
}

static const char* kReportHeader = "run_id,rv_rate,scope,vehicle_type,W_avg,co2_mg_s,fuel_ml_s,headway_m,n";

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << kReportHeader << "\n";
    for (const auto& r : report.rows)
        out << r.run_id << "," << fmt_double(r.rv_rate) << "," << r.scope << "," << r.vehicle_type
            << "," << fmt_double(r.w_avg) << "," << fmt_double(r.co2_mg_s) << ","
            << fmt_double(r.fuel_ml_s) << "," << fmt_double(r.headway_m) << "," << r.n << "\n";
    return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double csv_num(const std::string& tok, int line) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ConfigError("report csv: expected a number, got '" + tok + "'", line);
    }
    if (pos != tok.size())
        throw ConfigError("report csv: trailing characters in '" + tok + "'", line);
    return v;
}

}  // namespace

MetricsReport report_from_csv(const std::string& csv) {
    MetricsReport rep;
    std::istringstream in(csv);
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kReportHeader)
                throw ConfigError("report csv: unexpected header '" + line + "'", lineno);
            header_seen = true;
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 9) throw ConfigError("report csv: expected 9 columns", lineno);
        ReportRow r;
        r.run_id = f[0];
        r.rv_rate = csv_num(f[1], lineno);
        r.scope = f[2];
        r.vehicle_type = f[3];
        r.w_avg = csv_num(f[4], lineno);
        r.co2_mg_s = csv_num(f[5], lineno);
        r.fuel_ml_s = csv_num(f[6], lineno);
        r.headway_m = csv_num(f[7], lineno);
        const double n = csv_num(f[8], lineno);
        if (n < 0 || n != std::floor(n))
            throw ConfigError("report csv: n must be a nonnegative integer", lineno);
        r.n = static_cast<std::size_t>(n);
        rep.rows.push_back(r);
    }
    if (!header_seen) throw ConfigError("report csv: missing header");
    return rep;
}

void write_report(const MetricsReport& report, const std::string& path) {
    write_file(path, report_to_csv(report));
}

void validate_report_csv(const std::string& csv) {
    const MetricsReport rep = report_from_csv(csv);
    int lineno = 1;
    for (const auto& r : rep.rows) {
        ++lineno;
        if (r.rv_rate < 0.0 || r.rv_rate > 1.0)
            throw ConfigError("report csv: rv_rate out of [0,1]", lineno);
        if (r.scope.empty()) throw ConfigError("report csv: empty scope", lineno);
        if (r.vehicle_type.empty()) throw ConfigError("report csv: empty vehicle_type", lineno);
        if (r.w_avg < 0 || r.co2_mg_s < 0 || r.fuel_ml_s < 0 || r.headway_m < 0)
            throw ConfigError("report csv: negative metric value", lineno);
    }
}

}  // namespace crossflow
