#include "crossflow/topology.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "crossflow/util.hpp"

namespace crossflow {

namespace {

struct Vec2 {
    double x, y;
};
Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

int orient_sign(Vec2 a, Vec2 b, Vec2 c) {
    const double d = cross(b - a, c - a);
    const double eps = 1e-9;
    return d > eps ? 1 : (d < -eps ? -1 : 0);
}

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
    return std::min(a.x, b.x) - 1e-9 <= p.x && p.x <= std::max(a.x, b.x) + 1e-9 &&
           std::min(a.y, b.y) - 1e-9 <= p.y && p.y <= std::max(a.y, b.y) + 1e-9;
}

// True when segments [a1,a2] and [b1,b2] share any point.
bool segments_intersect(Vec2 a1, Vec2 a2, Vec2 b1, Vec2 b2) {
    const int o1 = orient_sign(a1, a2, b1);
    const int o2 = orient_sign(a1, a2, b2);
    const int o3 = orient_sign(b1, b2, a1);
    const int o4 = orient_sign(b1, b2, a2);
    if (o1 != o2 && o3 != o4) return true;
    if (o1 == 0 && on_segment(a1, a2, b1)) return true;
    if (o2 == 0 && on_segment(a1, a2, b2)) return true;
    if (o3 == 0 && on_segment(b1, b2, a1)) return true;
    if (o4 == 0 && on_segment(b1, b2, a2)) return true;
    return false;
}

}  // namespace

int Network::approach_index(const std::string& id) const {
    for (std::size_t i = 0; i < approaches.size(); ++i)
        if (approaches[i].id == id) return static_cast<int>(i);
    return -1;
}

int Network::movement_index(const std::string& id) const {
    for (std::size_t i = 0; i < movements.size(); ++i)
        if (movements[i].id == id) return static_cast<int>(i);
    return -1;
}

void Network::validate() const {
    if (approaches.empty()) throw ConfigError("network has no approaches");
    if (movements.empty()) throw ConfigError("network has no movements");
    if (control_zone <= 0) throw ConfigError("control_zone must be > 0");

    std::set<std::string> seen;
    for (const auto& a : approaches) {
        if (!seen.insert(a.id).second) throw ConfigError("duplicate approach id '" + a.id + "'");
        if (a.length <= 0) throw ConfigError("approach '" + a.id + "': length must be > 0");
        if (a.lane_count < 1) throw ConfigError("approach '" + a.id + "': lane_count must be >= 1");
        if (a.speed_limit <= 0) throw ConfigError("approach '" + a.id + "': speed_limit must be > 0");
        if (a.length <= control_zone)
            throw ConfigError("approach '" + a.id + "': control_zone (" + fmt_double(control_zone) +
                              ") must be shorter than approach length (" + fmt_double(a.length) + ")");
    }

    const int n_app = static_cast<int>(approaches.size());
    seen.clear();
    for (const auto& m : movements) {
        if (!seen.insert(m.id).second) throw ConfigError("duplicate movement id '" + m.id + "'");
        if (m.entry_approach < 0 || m.entry_approach >= n_app)
            throw ConfigError("movement '" + m.id + "': dangling entry approach reference");
        if (m.exit_approach < 0 || m.exit_approach >= n_app)
            throw ConfigError("movement '" + m.id + "': dangling exit approach reference");
        if (m.entry_approach == m.exit_approach)
            throw ConfigError("movement '" + m.id + "': entry and exit approach must differ");
        if (m.entry_lane < 0 || m.entry_lane >= approaches[m.entry_approach].lane_count)
            throw ConfigError("movement '" + m.id + "': entry_lane out of range");
        if (m.internal_length <= 0)
            throw ConfigError("movement '" + m.id + "': internal_length must be > 0");
        if (m.direction_group < 0)
            throw ConfigError("movement '" + m.id + "': direction_group must be >= 0");
    }

    const std::size_t n = movements.size();
    if (conflict_matrix.size() != n)
        throw ConfigError("conflict matrix size does not match movement count");
    for (std::size_t i = 0; i < n; ++i) {
        if (conflict_matrix[i].size() != n)
            throw ConfigError("conflict matrix row size does not match movement count");
        if (conflict_matrix[i][i])
            throw ConfigError("conflict matrix diagonal must be false ('" + movements[i].id + "')");
        for (std::size_t j = 0; j < n; ++j)
            if (conflict_matrix[i][j] != conflict_matrix[j][i])
                throw ConfigError("asymmetric conflict matrix ('" + movements[i].id + "', '" +
                                  movements[j].id + "')");
    }
}

void DemandSpec::validate(const Network& net) const {
    const std::size_t n_app = net.approaches.size();
    if (inflow.size() != n_app) throw ConfigError("demand: inflow entry count != approach count");
    if (turning_fractions.size() != n_app)
        throw ConfigError("demand: turning fraction rows != approach count");
    if (rv_rate < 0.0 || rv_rate > 1.0) throw ConfigError("demand: rv_rate must be in [0, 1]");
    for (std::size_t a = 0; a < n_app; ++a) {
        if (inflow[a] < 0) throw ConfigError("demand: negative inflow for '" + net.approaches[a].id + "'");
        if (turning_fractions[a].size() != net.movements.size())
            throw ConfigError("demand: turning fraction row size != movement count");
        double sum = 0.0;
        bool has_movement = false;
        for (std::size_t m = 0; m < net.movements.size(); ++m) {
            const double f = turning_fractions[a][m];
            if (f < 0) throw ConfigError("demand: negative turning fraction");
            if (f > 0 && net.movements[m].entry_approach != static_cast<int>(a))
                throw ConfigError("demand: turning fraction assigned to movement '" +
                                  net.movements[m].id + "' which does not enter approach '" +
                                  net.approaches[a].id + "'");
            sum += f;
            if (net.movements[m].entry_approach == static_cast<int>(a)) has_movement = true;
        }
        if (inflow[a] > 0) {
            if (!has_movement)
                throw ConfigError("demand: inflow on approach '" + net.approaches[a].id +
                                  "' which has no movements");
            if (std::abs(sum - 1.0) > 1e-9)
                throw ConfigError("demand: turning fractions for '" + net.approaches[a].id +
                                  "' sum to " + fmt_double(sum) + ", expected 1");
        }
    }
}

bool conflicts(const Network& net, int a, int b) {
    const int n = static_cast<int>(net.movements.size());
    if (a < 0 || a >= n || b < 0 || b >= n)
        throw std::out_of_range("conflicts: unknown movement index");
    if (a == b) return false;
    return net.conflict_matrix[a][b];
}

bool conflicts(const Network& net, const std::string& a, const std::string& b) {
    const int ia = net.movement_index(a);
    const int ib = net.movement_index(b);
    if (ia < 0) throw std::out_of_range("conflicts: unknown movement id '" + a + "'");
    if (ib < 0) throw std::out_of_range("conflicts: unknown movement id '" + b + "'");
    return conflicts(net, ia, ib);
}

// ---------------------------------------------------------------------------
// Config text format (see docs/formats.md)
// ---------------------------------------------------------------------------

namespace {

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

double parse_num(const std::string& tok, int line) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(tok, &pos);
    } catch (const std::exception&) {
        throw ConfigError("expected a number, got '" + tok + "'", line);
    }
    if (pos != tok.size()) throw ConfigError("trailing characters in number '" + tok + "'", line);
    return v;
}

int parse_int(const std::string& tok, int line) {
    const double v = parse_num(tok, line);
    if (v != std::floor(v)) throw ConfigError("expected an integer, got '" + tok + "'", line);
    return static_cast<int>(v);
}

}  // namespace

NetworkFile parse_network_config(const std::string& text) {
    Network net;
    struct DemandRaw {
        double rv_rate = 0.0;
        std::map<std::string, double> inflow;
        std::map<std::string, std::map<std::string, double>> turns;
        bool present = false;
    } dem;
    // directed conflict entries, validated for symmetric closure afterwards
    std::vector<std::pair<std::string, std::string>> conflict_entries;
    std::vector<int> conflict_lines;

    std::string section;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = strip(raw);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("unterminated section header", lineno);
            section = line.substr(1, line.size() - 2);
            if (section != "approaches" && section != "movements" && section != "conflicts" &&
                section != "demand")
                throw ConfigError("unknown section [" + section + "]", lineno);
            continue;
        }

        const auto toks = split_ws(line);
        if (section.empty()) {
            if (toks[0] == "control_zone" && toks.size() == 2) {
                net.control_zone = parse_num(toks[1], lineno);
            } else {
                throw ConfigError("unknown top-level key '" + toks[0] + "'", lineno);
            }
        } else if (section == "approaches") {
            if (toks.size() != 4)
                throw ConfigError("approach line needs: id length lanes speed_limit", lineno);
            Approach a;
            a.id = toks[0];
            a.length = parse_num(toks[1], lineno);
            a.lane_count = parse_int(toks[2], lineno);
            a.speed_limit = parse_num(toks[3], lineno);
            net.approaches.push_back(a);
        } else if (section == "movements") {
            if (toks.size() != 6)
                throw ConfigError(
                    "movement line needs: id entry_approach entry_lane exit_approach "
                    "direction_group internal_length",
                    lineno);
            Movement m;
            m.id = toks[0];
            m.entry_approach = net.approach_index(toks[1]);
            if (m.entry_approach < 0)
                throw ConfigError("dangling approach reference '" + toks[1] + "'", lineno);
            m.entry_lane = parse_int(toks[2], lineno);
            m.exit_approach = net.approach_index(toks[3]);
            if (m.exit_approach < 0)
                throw ConfigError("dangling approach reference '" + toks[3] + "'", lineno);
            m.direction_group = parse_int(toks[4], lineno);
            m.internal_length = parse_num(toks[5], lineno);
            net.movements.push_back(m);
        } else if (section == "conflicts") {
            if (toks.size() != 2) throw ConfigError("conflict line needs: movement_a movement_b", lineno);
            if (toks[0] == toks[1])
                throw ConfigError("movement '" + toks[0] + "' cannot conflict with itself", lineno);
            conflict_entries.emplace_back(toks[0], toks[1]);
            conflict_lines.push_back(lineno);
        } else if (section == "demand") {
            dem.present = true;
            if (toks[0] == "rv_rate" && toks.size() == 2) {
                dem.rv_rate = parse_num(toks[1], lineno);
            } else if (toks[0] == "inflow" && toks.size() == 3) {
                dem.inflow[toks[1]] = parse_num(toks[2], lineno);
            } else if (toks[0] == "turn" && toks.size() == 4) {
                dem.turns[toks[1]][toks[2]] = parse_num(toks[3], lineno);
            } else {
                throw ConfigError("unknown demand entry '" + toks[0] + "'", lineno);
            }
        }
    }

    const std::size_t n = net.movements.size();
    net.conflict_matrix.assign(n, std::vector<bool>(n, false));
    std::set<std::pair<int, int>> directed;
    for (std::size_t i = 0; i < conflict_entries.size(); ++i) {
        const auto& [sa, sb] = conflict_entries[i];
        const int a = net.movement_index(sa);
        const int b = net.movement_index(sb);
        if (a < 0) throw ConfigError("conflict references unknown movement '" + sa + "'", conflict_lines[i]);
        if (b < 0) throw ConfigError("conflict references unknown movement '" + sb + "'", conflict_lines[i]);
        directed.insert({a, b});
    }
    for (const auto& [a, b] : directed) {
        if (!directed.count({b, a}))
            throw ConfigError("asymmetric conflict matrix: '" + net.movements[a].id + " " +
                              net.movements[b].id + "' listed without its mirror entry");
        net.conflict_matrix[a][b] = true;
    }

    net.validate();

    NetworkFile out;
    out.network = std::move(net);
    if (dem.present) {
        const Network& nn = out.network;
        DemandSpec d;
        d.rv_rate = dem.rv_rate;
        d.inflow.assign(nn.approaches.size(), 0.0);
        d.turning_fractions.assign(nn.approaches.size(),
                                   std::vector<double>(nn.movements.size(), 0.0));
        for (const auto& [aid, v] : dem.inflow) {
            const int ai = nn.approach_index(aid);
            if (ai < 0) throw ConfigError("demand inflow references unknown approach '" + aid + "'");
            d.inflow[ai] = v;
        }
        for (const auto& [aid, row] : dem.turns) {
            const int ai = nn.approach_index(aid);
            if (ai < 0) throw ConfigError("demand turn references unknown approach '" + aid + "'");
            for (const auto& [mid, f] : row) {
                const int mi = nn.movement_index(mid);
                if (mi < 0) throw ConfigError("demand turn references unknown movement '" + mid + "'");
                d.turning_fractions[ai][mi] = f;
            }
        }
        d.validate(nn);
        out.demand = std::move(d);
    }
    return out;
}

Network load_network(const std::string& config_text) {
    return parse_network_config(config_text).network;
}

std::string serialize_network(const Network& net, const DemandSpec* demand) {
    std::ostringstream out;
    out << "# crossflow network v1\n";
    out << "control_zone " << fmt_double(net.control_zone) << "\n\n";

    out << "[approaches]\n";
    out << "# id length_m lanes speed_limit_mps\n";
    for (const auto& a : net.approaches)
        out << a.id << " " << fmt_double(a.length) << " " << a.lane_count << " "
            << fmt_double(a.speed_limit) << "\n";

    out << "\n[movements]\n";
    out << "# id entry_approach entry_lane exit_approach direction_group internal_length_m\n";
    for (const auto& m : net.movements)
        out << m.id << " " << net.approaches[m.entry_approach].id << " " << m.entry_lane << " "
            << net.approaches[m.exit_approach].id << " " << m.direction_group << " "
            << fmt_double(m.internal_length) << "\n";

    out << "\n[conflicts]\n";
    out << "# directed entries; every pair appears in both orders\n";
    const std::size_t n = net.movements.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j && net.conflict_matrix[i][j])
                out << net.movements[i].id << " " << net.movements[j].id << "\n";

    if (demand) {
        out << "\n[demand]\n";
        out << "rv_rate " << fmt_double(demand->rv_rate) << "\n";
        for (std::size_t a = 0; a < net.approaches.size(); ++a)
            out << "inflow " << net.approaches[a].id << " " << fmt_double(demand->inflow[a]) << "\n";
        for (std::size_t a = 0; a < net.approaches.size(); ++a)
            for (std::size_t m = 0; m < n; ++m)
                if (demand->turning_fractions[a][m] > 0)
                    out << "turn " << net.approaches[a].id << " " << net.movements[m].id << " "
                        << fmt_double(demand->turning_fractions[a][m]) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Built-in 4-way generator
// ---------------------------------------------------------------------------

namespace {

constexpr double kLaneWidth = 3.5;

struct PathSpec {
    Vec2 entry, exit;
    int entry_approach, entry_lane, exit_approach, exit_lane;
};

}  // namespace

Network builtin_fourway(int lanes_per_approach) {
    if (lanes_per_approach < 1)
        throw std::invalid_argument("builtin_fourway: lanes_per_approach must be >= 1");
    const int n = lanes_per_approach;
    const double half = n * kLaneWidth + 1.5;

    Network net;
    net.control_zone = 30.0;
    const std::array<std::string, 4> names = {"N", "E", "S", "W"};
    // inbound headings toward the box center
    const std::array<Vec2, 4> heading = {{{0, -1}, {-1, 0}, {0, 1}, {1, 0}}};
    for (int a = 0; a < 4; ++a) net.approaches.push_back({names[a], 150.0, n, 15.0});

    auto right_normal = [](Vec2 h) { return Vec2{h.y, -h.x}; };
    auto entry_point = [&](int a, int lane) {
        const Vec2 edge = heading[a] * -half;
        return edge + right_normal(heading[a]) * (kLaneWidth * (lane + 0.5));
    };
    auto exit_point = [&](int a, int lane) {
        const Vec2 edge = heading[a] * -half;
        const Vec2 outbound = heading[a] * -1.0;
        return edge + right_normal(outbound) * (kLaneWidth * (lane + 0.5));
    };

    std::vector<PathSpec> paths;
    auto add_movement = [&](const std::string& id, int a, int lane, int exit_a, int exit_lane,
                            int group) {
        Movement m;
        m.id = id;
        m.entry_approach = a;
        m.entry_lane = lane;
        m.exit_approach = exit_a;
        m.direction_group = group;
        const Vec2 p0 = entry_point(a, lane);
        const Vec2 p1 = exit_point(exit_a, exit_lane);
        m.internal_length = norm(p1 - p0);
        net.movements.push_back(m);
        paths.push_back({p0, p1, a, lane, exit_a, exit_lane});
    };

    for (int a = 0; a < 4; ++a) {
        const int group_through = 2 * a;  // right turns share the through group
        const int group_left = 2 * a + 1;
        for (int lane = 0; lane < n; ++lane) {
            const std::string id = names[a] + "_T" + (n > 1 ? std::to_string(lane) : "");
            add_movement(id, a, lane, (a + 2) % 4, lane, group_through);
        }
        add_movement(names[a] + "_L", a, 0, (a + 1) % 4, 0, group_left);
        add_movement(names[a] + "_R", a, n - 1, (a + 3) % 4, n - 1, group_through);
    }

    const std::size_t m = net.movements.size();
    net.conflict_matrix.assign(m, std::vector<bool>(m, false));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const PathSpec& p = paths[i];
            const PathSpec& q = paths[j];
            // movements sharing an entry lane are sequential users, not conflicts
            if (p.entry_approach == q.entry_approach && p.entry_lane == q.entry_lane) continue;
            bool c;
            if (p.exit_approach == q.exit_approach && p.exit_lane == q.exit_lane) {
                c = true;  // merge into the same outbound lane
            } else {
                c = segments_intersect(p.entry, p.exit, q.entry, q.exit);
            }
            net.conflict_matrix[i][j] = net.conflict_matrix[j][i] = c;
        }
    }

    net.validate();
    return net;
}

DemandSpec default_demand(const Network& net, double total_inflow, double rv_rate) {
    DemandSpec d;
    d.rv_rate = rv_rate;
    const std::size_t n_app = net.approaches.size();
    d.inflow.assign(n_app, total_inflow / static_cast<double>(n_app));
    d.turning_fractions.assign(n_app, std::vector<double>(net.movements.size(), 0.0));

    for (std::size_t a = 0; a < n_app; ++a) {
        std::vector<int> through, left, right, other;
        for (std::size_t mi = 0; mi < net.movements.size(); ++mi) {
            const Movement& mv = net.movements[mi];
            if (mv.entry_approach != static_cast<int>(a)) continue;
            const auto us = mv.id.rfind('_');
            const char kind = (us != std::string::npos && us + 1 < mv.id.size()) ? mv.id[us + 1] : '?';
            if (kind == 'T') through.push_back(static_cast<int>(mi));
            else if (kind == 'L') left.push_back(static_cast<int>(mi));
            else if (kind == 'R') right.push_back(static_cast<int>(mi));
            else other.push_back(static_cast<int>(mi));
        }
        if (!through.empty() && !left.empty() && !right.empty() && other.empty()) {
            for (int mi : through) d.turning_fractions[a][mi] = 0.5 / through.size();
            for (int mi : left) d.turning_fractions[a][mi] = 0.25 / left.size();
            for (int mi : right) d.turning_fractions[a][mi] = 0.25 / right.size();
        } else {
            std::vector<int> all = through;
            all.insert(all.end(), left.begin(), left.end());
            all.insert(all.end(), right.begin(), right.end());
            all.insert(all.end(), other.begin(), other.end());
            for (int mi : all) d.turning_fractions[a][mi] = 1.0 / all.size();
        }
    }
    d.validate(net);
    return d;
}

NetworkFile resolve_network_source(const std::string& source) {
    if (source.rfind("builtin:", 0) == 0) {
        const std::string rest = source.substr(8);
        if (rest.rfind("fourway", 0) == 0) {
            int lanes = 1;
            const auto colon = rest.find(':');
            if (colon != std::string::npos) lanes = parse_int(rest.substr(colon + 1), 0);
            return {builtin_fourway(lanes), std::nullopt};
        }
        throw ConfigError("unknown builtin network '" + source + "'");
    }
    std::ifstream f(source);
    if (!f) throw ConfigError("cannot open network file '" + source + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_network_config(ss.str());
}

}  // namespace crossflow
