#include "crossflow/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "crossflow/util.hpp"

namespace crossflow {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double idm_accel(double v, double v_desired, double gap, double dv, const VehicleType& p,
                 double headway_time) {
    const double emergency = -kEmergencyFactor * p.max_decel;
    if (gap <= 0.0) return emergency;

    const double free_term = std::pow(v / v_desired, kIdmDelta);
    double interaction = 0.0;
    if (std::isfinite(gap)) {
        const double s_star =
            p.min_gap + v * headway_time + v * dv / (2.0 * std::sqrt(p.max_accel * p.max_decel));
        interaction = (s_star / gap) * (s_star / gap);
    }
    const double a = p.max_accel * (1.0 - free_term - interaction);
    return std::clamp(a, emergency, p.max_accel);
}

double rv_stop_accel(double u, double d_int, double max_decel) {
    const double emergency = -kEmergencyFactor * max_decel;
    if (u <= 0.0) return 0.0;
    if (d_int <= 0.0) return emergency;  // cannot stop in time
    const double a = -(u * u) / (2.0 * d_int);
    return std::max(a, emergency);
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

double SignalPlan::cycle_length() const {
    double c = 0.0;
    for (const auto& ph : phases) c += ph.green + ph.yellow;
    return c;
}

void SignalPlan::validate(const Network& net) const {
    if (phases.empty()) throw ConfigError("signal plan has no phases");
    std::vector<bool> covered(net.movements.size(), false);
    for (const auto& ph : phases) {
        if (ph.green <= 0 || ph.yellow <= 0)
            throw ConfigError("signal phase durations must be > 0");
        for (std::size_t i = 0; i < ph.green_movements.size(); ++i) {
            const int a = ph.green_movements[i];
            if (a < 0 || a >= static_cast<int>(net.movements.size()))
                throw ConfigError("signal phase references unknown movement");
            covered[a] = true;
            for (std::size_t j = i + 1; j < ph.green_movements.size(); ++j)
                if (conflicts(net, a, ph.green_movements[j]))
                    throw ConfigError("signal phase greens conflicting movements '" +
                                      net.movements[a].id + "' and '" +
                                      net.movements[ph.green_movements[j]].id + "'");
        }
    }
    for (std::size_t m = 0; m < covered.size(); ++m)
        if (!covered[m])
            throw ConfigError("movement '" + net.movements[m].id + "' appears in no signal phase");
}

std::vector<LightState> fixed_time_signal(const SignalPlan& plan, const Network& net, double t) {
    std::vector<LightState> out(net.movements.size(), LightState::Red);
    const double cycle = plan.cycle_length();
    double pos = std::fmod(t, cycle);
    if (pos < 0) pos += cycle;
    for (const auto& ph : plan.phases) {
        if (pos < ph.green + ph.yellow) {
            const LightState s = pos < ph.green ? LightState::Green : LightState::Yellow;
            for (int m : ph.green_movements) out[m] = s;
            return out;
        }
        pos -= ph.green + ph.yellow;
    }
    return out;  // unreachable for a valid plan
}

SignalPlan default_signal_plan(const Network& net, double green, double yellow) {
    SignalPlan plan;
    for (std::size_t a = 0; a < net.approaches.size(); ++a) {
        SignalPhase ph;
        ph.green = green;
        ph.yellow = yellow;
        for (std::size_t m = 0; m < net.movements.size(); ++m)
            if (net.movements[m].entry_approach == static_cast<int>(a))
                ph.green_movements.push_back(static_cast<int>(m));
        if (!ph.green_movements.empty()) plan.phases.push_back(std::move(ph));
    }
    plan.validate(net);
    return plan;
}

// ---------------------------------------------------------------------------
// SimState
// ---------------------------------------------------------------------------

SimState::SimState(const Network& network, std::uint64_t seed,
                   std::vector<VehicleType> vehicle_types, EmissionModel em)
    : net(&network), types(std::move(vehicle_types)), emissions(std::move(em)), rng(seed) {
    int lanes = 0;
    for (const auto& a : network.approaches) lanes += a.lane_count;
    approach_lane.resize(lanes);
    exit_lane.resize(lanes);
    inside.resize(network.movements.size());
}

int SimState::lane_index(int approach, int lane) const {
    int idx = 0;
    for (int a = 0; a < approach; ++a) idx += net->approaches[a].lane_count;
    return idx + lane;
}

int SimState::exit_lane_of(const Movement& m) const {
    return m.entry_lane % net->approaches[m.exit_approach].lane_count;
}

double SimState::dist_to_line(const VehicleState& v) const {
    return net->approaches[net->movements[v.movement].entry_approach].length - v.pos;
}

double SimState::v_desired(const VehicleState& v) const {
    const Movement& m = net->movements[v.movement];
    const int app = v.phase == Phase::Exit ? m.exit_approach : m.entry_approach;
    return std::min(types[v.type].max_speed, net->approaches[app].speed_limit);
}

bool SimState::occupies_box(const VehicleState& v) const {
    if (v.phase == Phase::Inside) return true;
    return v.phase == Phase::Exit && v.pos < types[v.type].length;
}

// ---------------------------------------------------------------------------
// Spawning
// ---------------------------------------------------------------------------

namespace {

// Injects the vehicle onto its movement's entry lane when there is room.
bool try_place(SimState& sim, const PendingSpawn& ps, StepEvents* events) {
    const Movement& m = sim.net->movements[ps.movement];
    const VehicleType& t = sim.types[ps.type];
    auto& lane = sim.approach_lane[sim.lane_index(m.entry_approach, m.entry_lane)];

    double space = sim.net->approaches[m.entry_approach].length;
    double rear_speed = kInf;
    if (!lane.empty()) {
        const VehicleState& rear = sim.vehicles.at(lane.back());
        space = rear.pos - sim.types[rear.type].length;
        rear_speed = rear.speed;
    }
    if (space < t.length + t.min_gap) return false;

    VehicleState v;
    v.id = sim.next_id++;
    v.type = ps.type;
    v.role = ps.role;
    v.movement = ps.movement;
    v.phase = Phase::Approach;
    v.pos = t.length;
    const double v_des = std::min(t.max_speed, sim.net->approaches[m.entry_approach].speed_limit);
    const double gap_after = space - t.length;
    v.speed = std::clamp((gap_after - t.min_gap) / kIdmHeadwayTime, 0.0,
                         std::min(v_des, rear_speed + 2.0));
    v.spawn_time = sim.time;
    v.last_moving_time = sim.time;
    lane.push_back(v.id);
    if (events) events->spawned.push_back(v.id);
    sim.entered_total++;
    sim.vehicles.emplace(v.id, v);
    return true;
}

}  // namespace

void spawn(SimState& sim, const DemandSpec& demand, double dt, StepEvents* events) {
    // retry deferred arrivals first, preserving order
    std::vector<PendingSpawn> still_waiting;
    for (const auto& ps : sim.deferred)
        if (!try_place(sim, ps, events)) still_waiting.push_back(ps);
    sim.deferred = std::move(still_waiting);

    for (std::size_t a = 0; a < sim.net->approaches.size(); ++a) {
        const double p = std::min(1.0, demand.inflow[a] * dt / 3600.0);
        if (p <= 0.0 || !sim.rng.bernoulli(p)) continue;
        sim.spawn_draws++;
        const auto& row = demand.turning_fractions[a];
        const int movement = static_cast<int>(
            sim.rng.pick_weighted(std::span<const double>(row.data(), row.size())));
        const auto [type, role] = sample_vehicle(demand.rv_rate, sim.rng);
        PendingSpawn ps{movement, static_cast<int>(type), role};
        if (!try_place(sim, ps, events)) sim.deferred.push_back(ps);
    }
    if (events) events->deferred = static_cast<int>(sim.deferred.size());
}

// ---------------------------------------------------------------------------
// Entry permission machinery
// ---------------------------------------------------------------------------

std::vector<EntryCandidate> entry_candidates(const SimState& sim, double window, double dt,
                                             std::optional<Role> role_filter, bool require_stop) {
    std::vector<EntryCandidate> out;
    for (std::size_t a = 0; a < sim.net->approaches.size(); ++a) {
        for (int lane = 0; lane < sim.net->approaches[a].lane_count; ++lane) {
            const auto& dq = sim.approach_lane[sim.lane_index(static_cast<int>(a), lane)];
            if (dq.empty()) continue;
            const VehicleState& v = sim.vehicles.at(dq.front());
            if (role_filter && v.role != *role_filter) continue;
            if (v.entry_granted) continue;  // already holds a reservation
            const double d = sim.dist_to_line(v);
            if (require_stop) {
                if (d > window || v.speed > kStopEntrySpeed) continue;
                if (sim.time - v.last_moving_time < kStopDwell) continue;
            } else if (d > window && v.speed * dt < d) {
                continue;
            }
            EntryCandidate c;
            c.id = v.id;
            c.movement = v.movement;
            c.role = v.role;
            c.arrival = v.zone_arrival >= 0 ? v.zone_arrival : sim.time;
            c.approach = static_cast<int>(a);
            c.lane = lane;
            c.dist_to_line = d;
            c.speed = v.speed;
            out.push_back(c);
        }
    }
    return out;
}

std::vector<bool> occupied_movement_mask(const SimState& sim) {
    std::vector<bool> mask(sim.net->movements.size(), false);
    for (const auto& [id, v] : sim.vehicles)
        if (sim.occupies_box(v) || (v.phase == Phase::Approach && v.entry_granted))
            mask[v.movement] = true;
    return mask;
}

void grant_fcfs(SimState& sim, std::vector<EntryCandidate> cands, std::vector<bool>& occupied,
                std::set<VehicleId>& grants) {
    std::sort(cands.begin(), cands.end(), [&](const EntryCandidate& x, const EntryCandidate& y) {
        if (x.arrival != y.arrival) return x.arrival < y.arrival;
        const std::string& ax = sim.net->approaches[x.approach].id;
        const std::string& ay = sim.net->approaches[y.approach].id;
        if (ax != ay) return ax < ay;
        if (x.lane != y.lane) return x.lane < y.lane;
        return x.id < y.id;
    });
    for (const auto& c : cands) {
        bool blocked = false;
        for (std::size_t m = 0; m < occupied.size(); ++m)
            if (occupied[m] && static_cast<int>(m) != c.movement) {
                blocked = true;
                break;
            }
        if (blocked) continue;
        grants.insert(c.id);
        occupied[c.movement] = true;
        sim.vehicles.at(c.id).entry_granted = true;
    }
}

std::set<VehicleId> unsignalized_right_of_way(SimState& sim, double dt) {
    auto occupied = occupied_movement_mask(sim);
    std::set<VehicleId> grants;
    for (const auto& [id, v] : sim.vehicles)
        if (v.phase == Phase::Approach && v.entry_granted) grants.insert(id);
    grant_fcfs(sim, entry_candidates(sim, kHumanGrantWindow, dt, std::nullopt, true), occupied,
               grants);
    return grants;
}

// ---------------------------------------------------------------------------
// World update
// ---------------------------------------------------------------------------

namespace {

// Gap to the vehicle immediately ahead, chaining into the next segment for
// the segment head.  Returns {gap, leader_speed} or nullopt when free.
struct LeaderInfo {
    double gap;
    double speed;
};

std::optional<LeaderInfo> leader_info(const SimState& sim, const VehicleState& v) {
    const Movement& m = sim.net->movements[v.movement];
    const auto* exit_dq = &sim.exit_lane[sim.lane_index(m.exit_approach, sim.exit_lane_of(m))];

    const std::deque<VehicleId>* dq = nullptr;
    double ahead = 0.0;  // distance from v's front bumper to the end of its segment
    // downstream segments to chain into when v heads its own segment
    const std::deque<VehicleId>* next1 = nullptr;
    const std::deque<VehicleId>* next2 = nullptr;
    double next1_len = 0.0;
    if (v.phase == Phase::Approach) {
        dq = &sim.approach_lane[sim.lane_index(m.entry_approach, m.entry_lane)];
        ahead = sim.net->approaches[m.entry_approach].length - v.pos;
        next1 = &sim.inside[v.movement];
        next1_len = m.internal_length;
        next2 = exit_dq;
    } else if (v.phase == Phase::Inside) {
        dq = &sim.inside[v.movement];
        ahead = m.internal_length - v.pos;
        next1 = exit_dq;
    } else {
        dq = exit_dq;
    }

    const auto it = std::find(dq->begin(), dq->end(), v.id);
    if (it != dq->begin()) {
        const VehicleState& lead = sim.vehicles.at(*std::prev(it));
        return LeaderInfo{lead.pos - sim.types[lead.type].length - v.pos, lead.speed};
    }
    if (next1 && !next1->empty()) {
        const VehicleState& lead = sim.vehicles.at(next1->back());
        return LeaderInfo{ahead + lead.pos - sim.types[lead.type].length, lead.speed};
    }
    if (next2 && !next2->empty()) {
        const VehicleState& lead = sim.vehicles.at(next2->back());
        return LeaderInfo{ahead + next1_len + lead.pos - sim.types[lead.type].length, lead.speed};
    }
    return std::nullopt;
}

}  // namespace

StepEvents step(SimState& sim, double dt, const StepControl& control) {
    if (dt <= 0.0) throw std::invalid_argument("step: dt must be > 0");
    StepEvents events;
    const Network& net = *sim.net;

    std::vector<LightState> lights;
    if (control.signal) lights = fixed_time_signal(*control.signal, net, sim.time);

    for (auto& [id, v] : sim.vehicles)
        if (v.role == Role::Robot) v.has_action = false;
    if (control.rv_actions) {
        for (const auto& [id, act] : *control.rv_actions) {
            const auto it = sim.vehicles.find(id);
            if (it == sim.vehicles.end())
                throw std::invalid_argument("step: command for unknown vehicle " + std::to_string(id));
            if (it->second.role != Role::Robot)
                throw std::invalid_argument("step: command for non-robot vehicle " + std::to_string(id));
            it->second.has_action = true;
            it->second.action = act;
            if (act == Action::Stop) it->second.entry_granted = false;  // release
        }
    }

    auto permitted = [&](const VehicleState& v) {
        if (control.signal) return lights[v.movement] == LightState::Green;
        if (control.grants) return control.grants->count(v.id) > 0;
        return true;  // uncontrolled free flow
    };

    // accelerations from the pre-step state
    const bool uncontrolled_box = control.signal == nullptr && control.grants != nullptr;
    for (auto& [id, v] : sim.vehicles) {
        const VehicleType& t = sim.types[v.type];
        double v_des = sim.v_desired(v);
        // cautious creep across a signal-less box for non-robot drivers
        if (uncontrolled_box && v.role == Role::Human && v.phase == Phase::Inside)
            v_des = std::min(v_des, kCautiousCrossSpeed);
        const bool committed_drive =
            v.role == Role::Robot &&
            (v.phase == Phase::Inside || (v.has_action && v.action == Action::Go));

        double a;
        if (v.role == Role::Robot && v.phase == Phase::Approach && v.has_action &&
            v.action == Action::Stop) {
            a = rv_stop_accel(v.speed, sim.dist_to_line(v), t.max_decel);
        } else if (committed_drive) {
            a = v.speed < v_des ? t.max_accel
                                : t.max_accel * (1.0 - std::pow(v.speed / v_des, kIdmDelta));
        } else {
            a = idm_accel(v.speed, v_des, kInf, 0.0, t);
        }

        if (const auto lead = leader_info(sim, v)) {
            if (lead->gap <= 0.0) events.safety_flags.push_back(id);
            a = std::min(a, idm_accel(v.speed, v_des, lead->gap, v.speed - lead->speed, t));
        }
        // virtual standing obstacle at the stop line while entry is denied
        if (v.phase == Phase::Approach && !permitted(v) &&
            !(v.role == Role::Robot && v.has_action && v.action == Action::Stop)) {
            const double gap = std::max(sim.dist_to_line(v), 0.005);
            a = std::min(a, idm_accel(v.speed, v_des, gap, v.speed, t));
        }
        v.accel = a;
    }

    // semi-implicit integration + waiting/emission accounting
    for (auto& [id, v] : sim.vehicles) {
        const VehicleType& t = sim.types[v.type];
        v.speed = std::clamp(v.speed + v.accel * dt, 0.0, t.max_speed);
        v.pos += v.speed * dt;
        if (v.speed > kStopEntrySpeed) v.last_moving_time = sim.time + dt;
        if (v.speed < kWaitSpeedEps) v.waiting_time += dt;
        v.co2_mg += sim.emissions.co2_rate(t.emission_class, v.speed, v.accel) * dt;
        v.fuel_ml += sim.emissions.fuel_rate(t.emission_class, v.speed, v.accel) * dt;
    }
    sim.time += dt;

    // transitions, downstream first
    for (std::size_t li = 0; li < sim.exit_lane.size(); ++li) {
        auto& dq = sim.exit_lane[li];
        while (!dq.empty()) {
            VehicleState& v = sim.vehicles.at(dq.front());
            const Movement& m = net.movements[v.movement];
            if (v.pos < net.approaches[m.exit_approach].length) break;
            CompletedRecord rec;
            rec.id = v.id;
            rec.type = v.type;
            rec.role = v.role;
            rec.movement = v.movement;
            rec.spawn_time = v.spawn_time;
            rec.exit_time = sim.time;
            rec.waiting_time = v.waiting_time;
            rec.co2_mg = v.co2_mg;
            rec.fuel_ml = v.fuel_ml;
            sim.completed.push_back(rec);
            events.exited.push_back(rec);
            sim.vehicles.erase(v.id);
            dq.pop_front();
        }
    }
    for (std::size_t mi = 0; mi < sim.inside.size(); ++mi) {
        auto& dq = sim.inside[mi];
        while (!dq.empty()) {
            VehicleState& v = sim.vehicles.at(dq.front());
            const Movement& m = net.movements[mi];
            if (v.pos < m.internal_length) break;
            v.pos -= m.internal_length;
            v.phase = Phase::Exit;
            sim.exit_lane[sim.lane_index(m.exit_approach, sim.exit_lane_of(m))].push_back(v.id);
            dq.pop_front();
        }
    }
    for (std::size_t li = 0; li < sim.approach_lane.size(); ++li) {
        auto& dq = sim.approach_lane[li];
        while (!dq.empty()) {
            VehicleState& v = sim.vehicles.at(dq.front());
            const Movement& m = net.movements[v.movement];
            const double app_len = net.approaches[m.entry_approach].length;
            if (v.pos < app_len) break;
            if (!permitted(v)) {
                // hard hold at the line; flag if it arrived with real speed
                if (v.speed > 1.0) events.safety_flags.push_back(v.id);
                v.pos = app_len;
                v.speed = 0.0;
                break;
            }
            v.pos -= app_len;
            v.phase = Phase::Inside;
            v.has_action = false;
            v.entry_granted = false;
            v.zone_arrival = -1;
            sim.inside[v.movement].push_back(v.id);
            events.entered_box.push_back(v.id);
            dq.pop_front();
        }
    }

    // stamp control-zone arrival for entry ordering
    for (auto& [id, v] : sim.vehicles)
        if (v.phase == Phase::Approach && v.zone_arrival < 0 &&
            sim.dist_to_line(v) <= net.control_zone)
            v.zone_arrival = sim.time;

    events.conflicts = detect_conflicts(sim);
    events.deferred = static_cast<int>(sim.deferred.size());
    return events;
}

std::vector<std::pair<VehicleId, VehicleId>> detect_conflicts(const SimState& sim) {
    std::vector<std::pair<VehicleId, VehicleId>> out;
    const std::size_t n = sim.inside.size();
    for (std::size_t m1 = 0; m1 < n; ++m1) {
        if (sim.inside[m1].empty()) continue;
        for (std::size_t m2 = m1 + 1; m2 < n; ++m2) {
            if (sim.inside[m2].empty() || !sim.net->conflict_matrix[m1][m2]) continue;
            for (VehicleId a : sim.inside[m1])
                for (VehicleId b : sim.inside[m2])
                    out.emplace_back(std::min(a, b), std::max(a, b));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

GroupStats group_stats(const SimState& sim) {
    const int k = sim.net->direction_group_count();
    GroupStats g;
    g.queue_len.assign(k, 0);
    g.mean_wait.assign(k, 0.0);
    g.occupied.assign(k, false);
    std::vector<int> approach_count(k, 0);
    for (const auto& [id, v] : sim.vehicles) {
        const int grp = sim.net->movements[v.movement].direction_group;
        if (v.phase == Phase::Approach) {
            if (v.speed < kWaitSpeedEps) g.queue_len[grp]++;
            g.mean_wait[grp] += v.waiting_time;
            approach_count[grp]++;
        } else if (v.phase == Phase::Inside) {
            g.occupied[grp] = true;
        }
    }
    for (int i = 0; i < k; ++i)
        if (approach_count[i] > 0) g.mean_wait[i] /= approach_count[i];
    return g;
}

std::vector<HeadwayObservation> collect_headway_pairs(const SimState& sim) {
    std::vector<HeadwayObservation> out;
    std::vector<double> pos;
    std::vector<int> types;
    for (const auto& dq : sim.approach_lane) {
        if (dq.size() < 2) continue;
        pos.clear();
        types.clear();
        for (VehicleId id : dq) {
            const VehicleState& v = sim.vehicles.at(id);
            pos.push_back(v.pos);
            types.push_back(v.type);
        }
        const auto pairs = headways_from_lane(pos, types);
        out.insert(out.end(), pairs.begin(), pairs.end());
    }
    return out;
}

std::string event_log_header() { return "# crossflow-events v1\n"; }

void append_event_lines(const SimState& sim, const StepEvents& ev, std::string& out) {
    auto line = [&](VehicleId id, const char* kind, double pos, double speed) {
        out += fmt_double(sim.time);
        out += ' ';
        out += std::to_string(id);
        out += ' ';
        out += kind;
        out += ' ';
        out += fmt_double(pos);
        out += ' ';
        out += fmt_double(speed);
        out += '\n';
    };
    auto live = [&](VehicleId id, const char* kind) {
        const auto it = sim.vehicles.find(id);
        if (it != sim.vehicles.end()) line(id, kind, it->second.pos, it->second.speed);
    };
    for (VehicleId id : ev.spawned) live(id, "spawn");
    for (VehicleId id : ev.entered_box) live(id, "enter");
    for (const auto& rec : ev.exited)
        line(rec.id, "exit", sim.net->approaches[sim.net->movements[rec.movement].exit_approach].length, 0.0);
    for (const auto& [a, b] : ev.conflicts) {
        live(a, "conflict");
        live(b, "conflict");
    }
    for (VehicleId id : ev.safety_flags) live(id, "safety");
}

}  // namespace crossflow
