#include "crossflow/env.hpp"

#include <algorithm>
#include <cmath>

namespace crossflow {

std::vector<double> Observation::flatten() const {
    std::vector<double> out;
    out.reserve(dim());
    for (int l : queue_lengths) out.push_back(static_cast<double>(l));
    for (double w : wait_times) out.push_back(w);
    for (int o : occupancy) out.push_back(static_cast<double>(o));
    out.push_back(d_int);
    return out;
}

double compute_reward(Action action, double w_k, bool conflict, const RewardParams& p) {
    const double local = action == Action::Go ? w_k : -w_k;
    return p.alpha * local + (conflict ? p.conflict_penalty : 0.0);
}

Observation build_observation(const SimState& sim, const GroupStats& stats, VehicleId rv) {
    const auto it = sim.vehicles.find(rv);
    if (it == sim.vehicles.end())
        throw std::invalid_argument("build_observation: unknown vehicle " + std::to_string(rv));
    const VehicleState& v = it->second;
    if (v.role != Role::Robot || v.phase != Phase::Approach)
        throw std::invalid_argument("build_observation: vehicle is not an approaching robot");
    const double d = sim.dist_to_line(v);
    if (d > sim.net->control_zone + 1e-9)
        throw std::invalid_argument("build_observation: robot outside the control zone");

    Observation obs;
    obs.queue_lengths = stats.queue_len;
    obs.wait_times = stats.mean_wait;
    obs.occupancy.assign(stats.occupied.size(), 0);
    for (std::size_t i = 0; i < stats.occupied.size(); ++i)
        obs.occupancy[i] = stats.occupied[i] ? 1 : 0;
    obs.d_int = std::max(0.0, d);
    return obs;
}

std::vector<VehicleId> arbitrate(const Network& net, std::vector<ArbitrationCandidate> cands,
                                 std::vector<bool>& occupied) {
    std::sort(cands.begin(), cands.end(),
              [](const ArbitrationCandidate& a, const ArbitrationCandidate& b) {
                  if (a.score != b.score) return a.score > b.score;
                  return a.id < b.id;
              });
    std::vector<VehicleId> granted;
    for (const auto& c : cands) {
        bool blocked = false;
        for (std::size_t m = 0; m < occupied.size(); ++m)
            if (occupied[m] && conflicts(net, c.movement, static_cast<int>(m))) {
                blocked = true;
                break;
            }
        if (blocked) continue;
        granted.push_back(c.id);
        occupied[c.movement] = true;
    }
    return granted;
}

TrafficEnv::TrafficEnv(const Network& net, EpisodeConfig cfg, ControllerSpec controller,
                       RewardParams reward, double arbitration_beta)
    : net_(&net),
      cfg_(std::move(cfg)),
      controller_(std::move(controller)),
      reward_(reward),
      beta_(arbitration_beta) {
    if (cfg_.horizon <= 0) throw ConfigError("episode horizon must be > 0");
    if (cfg_.dt <= 0) throw ConfigError("episode dt must be > 0");
    if (reward_.alpha <= 0) throw ConfigError("reward alpha must be > 0");
    cfg_.demand.validate(net);
    if (controller_.kind == ControllerKind::Signalized) controller_.plan.validate(net);
    reset();
}

std::map<VehicleId, Observation> TrafficEnv::reset() {
    sim_ = std::make_unique<SimState>(*net_, cfg_.seed);
    awaiting_.clear();
    last_stats_ = group_stats(*sim_);
    return observe_awaiting();
}

bool TrafficEnv::done() const { return sim_->time >= cfg_.horizon - 1e-9; }

std::map<VehicleId, Observation> TrafficEnv::observe_awaiting() {
    last_stats_ = group_stats(*sim_);
    awaiting_.clear();
    std::map<VehicleId, Observation> obs;
    if (controller_.kind != ControllerKind::Rl) return obs;  // baselines request no decisions
    for (const auto& [id, v] : sim_->vehicles) {
        if (v.role != Role::Robot || v.phase != Phase::Approach) continue;
        if (sim_->dist_to_line(v) > sim_->net->control_zone) continue;
        awaiting_.insert(id);
        obs.emplace(id, build_observation(*sim_, last_stats_, id));
    }
    return obs;
}

EnvStepResult TrafficEnv::env_step(const std::map<VehicleId, Action>& actions) {
    EnvStepResult result;
    if (done()) {
        result.done = true;
        return result;
    }
    for (const auto& [id, act] : actions)
        if (!awaiting_.count(id))
            throw std::invalid_argument("env_step: action for vehicle " + std::to_string(id) +
                                        " which is not awaiting a decision");
    for (VehicleId id : awaiting_)
        if (!actions.count(id))
            throw std::invalid_argument("env_step: missing action for awaiting vehicle " +
                                        std::to_string(id));

    const double dt = cfg_.dt;
    spawn(*sim_, cfg_.demand, dt, &result.events);

    StepEvents se;
    if (controller_.kind == ControllerKind::Signalized) {
        StepControl ctl;
        ctl.signal = &controller_.plan;
        se = step(*sim_, dt, ctl);
    } else if (controller_.kind == ControllerKind::Unsignalized) {
        const auto grants = unsignalized_right_of_way(*sim_, dt);
        StepControl ctl;
        ctl.grants = &grants;
        se = step(*sim_, dt, ctl);
    } else {
        auto occupied = occupied_movement_mask(*sim_);
        std::set<VehicleId> grants;
        // reservations held from earlier steps stay valid (Stop releases below)
        for (const auto& [id, v] : sim_->vehicles) {
            if (v.phase != Phase::Approach || !v.entry_granted) continue;
            const auto it = actions.find(id);
            if (v.role == Role::Robot && it != actions.end() && it->second == Action::Stop)
                continue;  // released in step()
            grants.insert(id);
        }
        std::vector<ArbitrationCandidate> rv_cands;
        for (const auto& c : entry_candidates(*sim_, net_->control_zone, dt, Role::Robot)) {
            const auto it = actions.find(c.id);
            if (it == actions.end() || it->second != Action::Go) continue;
            const int grp = net_->movements[c.movement].direction_group;
            rv_cands.push_back(
                {c.id, c.movement,
                 last_stats_.mean_wait[grp] + beta_ * static_cast<double>(last_stats_.queue_len[grp])});
        }
        for (VehicleId id : arbitrate(*net_, rv_cands, occupied)) {
            grants.insert(id);
            sim_->vehicles.at(id).entry_granted = true;
        }
        grant_fcfs(*sim_, entry_candidates(*sim_, kHumanGrantWindow, dt, Role::Human, true),
                   occupied, grants);
        StepControl ctl;
        ctl.grants = &grants;
        ctl.rv_actions = &actions;
        se = step(*sim_, dt, ctl);
    }

    // fold the dynamics events into the result (spawn already recorded)
    result.events.entered_box = std::move(se.entered_box);
    result.events.exited = std::move(se.exited);
    result.events.conflicts = std::move(se.conflicts);
    result.events.safety_flags = std::move(se.safety_flags);
    result.events.deferred = se.deferred;

    std::set<VehicleId> in_conflict;
    for (const auto& [a, b] : result.events.conflicts) {
        in_conflict.insert(a);
        in_conflict.insert(b);
    }

    // rewards for the robots that acted, using the stats their observations saw
    for (const auto& [id, act] : actions) {
        const auto vit = sim_->vehicles.find(id);
        const int mv = vit != sim_->vehicles.end()
                           ? vit->second.movement
                           : -1;
        double w_k = 0.0;
        if (mv >= 0) {
            const int grp = net_->movements[mv].direction_group;
            w_k = last_stats_.mean_wait[grp];
        }
        result.rewards[id] = compute_reward(act, w_k, in_conflict.count(id) > 0, reward_);
    }
    // committed robots still in the box collect the conflict penalty directly
    for (VehicleId id : in_conflict) {
        if (actions.count(id)) continue;
        const auto it = sim_->vehicles.find(id);
        if (it != sim_->vehicles.end() && it->second.role == Role::Robot)
            result.trailing_penalties[id] = reward_.conflict_penalty;
    }

    result.observations = observe_awaiting();
    result.done = done();
    return result;
}

}  // namespace crossflow
