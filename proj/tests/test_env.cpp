#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "crossflow/env.hpp"

using namespace crossflow;

namespace {

VehicleId put_vehicle(SimState& sim, int movement, Phase phase, double pos, double speed,
                      Role role = Role::Human, int type = 0) {
    VehicleState v;
    v.id = sim.next_id++;
    v.type = type;
    v.role = role;
    v.movement = movement;
    v.phase = phase;
    v.pos = pos;
    v.speed = speed;
    v.spawn_time = sim.time;
    const Movement& m = sim.net->movements[movement];
    if (phase == Phase::Approach)
        sim.approach_lane[sim.lane_index(m.entry_approach, m.entry_lane)].push_back(v.id);
    else if (phase == Phase::Inside)
        sim.inside[movement].push_back(v.id);
    else
        sim.exit_lane[sim.lane_index(m.exit_approach, sim.exit_lane_of(m))].push_back(v.id);
    sim.entered_total++;
    sim.vehicles.emplace(v.id, v);
    return v.id;
}

EpisodeConfig episode(const Network& net, double inflow, double rv_rate, double horizon = 300,
                      std::uint64_t seed = 1) {
    EpisodeConfig cfg;
    cfg.horizon = horizon;
    cfg.dt = 0.5;
    cfg.demand = default_demand(net, inflow, rv_rate);
    cfg.seed = seed;
    return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reward
// ---------------------------------------------------------------------------

TEST_CASE("reward: contract examples, exact") {
    RewardParams p;
    p.alpha = 0.2;
    CHECK(std::abs(compute_reward(Action::Stop, 5.0, false, p) - (-1.0)) < 1e-12);
    CHECK(std::abs(compute_reward(Action::Go, 5.0, true, p) - 0.0) < 1e-12);
    CHECK(std::abs(compute_reward(Action::Go, 0.0, false, p) - 0.0) < 1e-12);
    CHECK(std::abs(compute_reward(Action::Stop, 0.0, false, p) - 0.0) < 1e-12);
}

TEST_CASE("reward: sign follows the action whenever w_k > 0 and no conflict") {
    RewardParams p;
    for (double w : {0.5, 3.0, 42.0}) {
        CHECK(compute_reward(Action::Go, w, false, p) > 0);
        CHECK(compute_reward(Action::Stop, w, false, p) < 0);
    }
}

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------

TEST_CASE("observation: lone robot at the zone boundary sees zeros and d_int") {
    const Network net = builtin_fourway(1);
    SimState sim(net, 1);
    const int nt = net.movement_index("N_T");
    const VehicleId rv = put_vehicle(sim, nt, Phase::Approach, 120.0, 10.0, Role::Robot);
    const auto stats = group_stats(sim);
    const Observation obs = build_observation(sim, stats, rv);
    CHECK(obs.d_int == doctest::Approx(30.0));
    for (int l : obs.queue_lengths) CHECK(l == 0);
    for (int o : obs.occupancy) CHECK(o == 0);
    for (double w : obs.wait_times) CHECK(w == 0.0);
    CHECK(obs.dim() == 25);  // 3*8+1
}

TEST_CASE("observation: queue count and mean wait per group") {
    const Network net = builtin_fourway(1);
    SimState sim(net, 1);
    const int et = net.movement_index("E_T");  // group 2
    for (double w : {2.0, 4.0, 6.0}) {
        const VehicleId id = put_vehicle(sim, et, Phase::Approach, 150.0 - 8.0 * w, 0.0);
        sim.vehicles.at(id).waiting_time = w;
    }
    const int nt = net.movement_index("N_T");
    const VehicleId rv = put_vehicle(sim, nt, Phase::Approach, 130.0, 5.0, Role::Robot);
    const Observation obs = build_observation(sim, group_stats(sim), rv);
    CHECK(obs.queue_lengths[2] == 3);
    CHECK(obs.wait_times[2] == doctest::Approx(4.0));
    CHECK(obs.queue_lengths[1] == 0);
}

TEST_CASE("observation: box occupancy flags the occupant's group only") {
    const Network net = builtin_fourway(1);
    SimState sim(net, 1);
    const int sl = net.movement_index("S_L");  // group 5
    put_vehicle(sim, sl, Phase::Inside, 2.0, 5.0);
    const int nt = net.movement_index("N_T");
    const VehicleId rv = put_vehicle(sim, nt, Phase::Approach, 125.0, 5.0, Role::Robot);
    const Observation obs = build_observation(sim, group_stats(sim), rv);
    for (std::size_t k = 0; k < obs.occupancy.size(); ++k) CHECK(obs.occupancy[k] == (k == 5 ? 1 : 0));
}

TEST_CASE("observation: flattened layout is [l..., w..., o..., d_int]") {
    Observation obs;
    obs.queue_lengths = {1, 2};
    obs.wait_times = {3.5, 4.5};
    obs.occupancy = {0, 1};
    obs.d_int = 17.0;
    const auto flat = obs.flatten();
    CHECK(flat == std::vector<double>{1, 2, 3.5, 4.5, 0, 1, 17.0});
}

TEST_CASE("observation: rejects vehicles outside the control zone") {
    const Network net = builtin_fourway(1);
    SimState sim(net, 1);
    const int nt = net.movement_index("N_T");
    const VehicleId far = put_vehicle(sim, nt, Phase::Approach, 50.0, 10.0, Role::Robot);
    CHECK_THROWS_AS(build_observation(sim, group_stats(sim), far), std::invalid_argument);
    const VehicleId hv = put_vehicle(sim, nt, Phase::Approach, 140.0, 10.0, Role::Human);
    CHECK_THROWS_AS(build_observation(sim, group_stats(sim), hv), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Arbitration
// ---------------------------------------------------------------------------

TEST_CASE("arbitrate: lone candidate with an empty box is granted") {
    const Network net = builtin_fourway(1);
    auto occupied = std::vector<bool>(net.movements.size(), false);
    const auto granted = arbitrate(net, {{7, net.movement_index("N_T"), 3.0}}, occupied);
    CHECK(granted == std::vector<VehicleId>{7});
}

TEST_CASE("arbitrate: higher combined score wins a conflict") {
    const Network net = builtin_fourway(1);
    const int nt = net.movement_index("N_T");
    const int et = net.movement_index("E_T");
    auto occupied = std::vector<bool>(net.movements.size(), false);
    const auto granted = arbitrate(net, {{1, nt, 3.0}, {2, et, 7.0}}, occupied);
    CHECK(granted == std::vector<VehicleId>{2});
}

TEST_CASE("arbitrate: non-conflicting candidates are all granted") {
    const Network net = builtin_fourway(1);
    const int nt = net.movement_index("N_T");
    const int st = net.movement_index("S_T");
    auto occupied = std::vector<bool>(net.movements.size(), false);
    const auto granted = arbitrate(net, {{1, nt, 1.0}, {2, st, 9.0}}, occupied);
    CHECK(granted.size() == 2);
}

TEST_CASE("arbitrate: granted set ignores candidate order; ties break by id") {
    const Network net = builtin_fourway(1);
    const int nt = net.movement_index("N_T");
    const int et = net.movement_index("E_T");
    const int st = net.movement_index("S_T");
    const int wl = net.movement_index("W_L");
    std::vector<ArbitrationCandidate> cands = {
        {4, nt, 5.0}, {9, et, 5.0}, {2, st, 1.0}, {11, wl, 8.0}};
    std::vector<VehicleId> base;
    {
        auto occupied = std::vector<bool>(net.movements.size(), false);
        base = arbitrate(net, cands, occupied);
        std::sort(base.begin(), base.end());
    }
    // all 24 permutations give the same set
    std::sort(cands.begin(), cands.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    do {
        auto occupied = std::vector<bool>(net.movements.size(), false);
        auto got = arbitrate(net, cands, occupied);
        std::sort(got.begin(), got.end());
        CHECK(got == base);
    } while (std::next_permutation(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        return a.id < b.id;
    }));

    // isolated score tie between conflicting movements: lower id wins
    auto occupied = std::vector<bool>(net.movements.size(), false);
    const auto tied = arbitrate(net, {{9, et, 5.0}, {4, nt, 5.0}}, occupied);
    CHECK(tied == std::vector<VehicleId>{4});
}

TEST_CASE("arbitrate: granted movements are pairwise compatible with the box") {
    const Network net = builtin_fourway(1);
    std::vector<ArbitrationCandidate> cands;
    for (std::size_t m = 0; m < net.movements.size(); ++m)
        cands.push_back({static_cast<VehicleId>(m + 1), static_cast<int>(m),
                         static_cast<double>((m * 7) % 13)});
    auto occupied = std::vector<bool>(net.movements.size(), false);
    occupied[net.movement_index("N_T")] = true;  // box holds a northbound through
    const auto granted = arbitrate(net, cands, occupied);
    std::vector<int> gm;
    for (VehicleId id : granted) gm.push_back(static_cast<int>(id - 1));
    for (std::size_t i = 0; i < gm.size(); ++i) {
        CHECK_FALSE(conflicts(net, gm[i], net.movement_index("N_T")));
        for (std::size_t j = i + 1; j < gm.size(); ++j) CHECK_FALSE(conflicts(net, gm[i], gm[j]));
    }
}

// ---------------------------------------------------------------------------
// Episode mechanics
// ---------------------------------------------------------------------------

TEST_CASE("env: reset twice with the same seed gives identical first spawns") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 1200, 0.5, 100, 77), {ControllerKind::Rl, {}});
    auto first_spawn = [&]() -> std::pair<double, VehicleId> {
        env.reset();
        while (!env.done()) {
            auto res = env.env_step([&] {
                std::map<VehicleId, Action> a;
                for (VehicleId id : env.awaiting()) a[id] = Action::Go;
                return a;
            }());
            if (!res.events.spawned.empty()) return {env.time(), res.events.spawned.front()};
        }
        return {-1, 0};
    };
    const auto a = first_spawn();
    const auto b = first_spawn();
    CHECK(a == b);
    CHECK(a.first > 0);
}

TEST_CASE("env: horizon 0 is rejected") {
    const Network net = builtin_fourway(1);
    EpisodeConfig cfg = episode(net, 500, 0.1);
    cfg.horizon = 0;
    CHECK_THROWS_AS(TrafficEnv(net, cfg, {ControllerKind::Rl, {}}), ConfigError);
}

TEST_CASE("env: done lands exactly on horizon/dt steps") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 0, 0.0, 10.0, 1), {ControllerKind::Unsignalized, {}});
    int steps = 0;
    while (!env.done()) {
        env.env_step({});
        ++steps;
        REQUIRE(steps < 100);
    }
    CHECK(steps == 20);
    CHECK(env.time() == doctest::Approx(10.0));
}

TEST_CASE("env: zero robots in the zone still advances the world") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 2000, 0.0, 60, 3), {ControllerKind::Rl, {}});
    std::size_t spawned = 0;
    while (!env.done()) {
        CHECK(env.awaiting().empty());  // rv_rate 0: never a robot
        spawned += env.env_step({}).events.spawned.size();
    }
    CHECK(spawned > 5);
}

TEST_CASE("env: actions must cover exactly the awaiting set") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 3000, 1.0, 120, 5), {ControllerKind::Rl, {}});
    // run until a robot awaits
    while (env.awaiting().empty() && !env.done()) env.env_step({});
    REQUIRE(!env.awaiting().empty());
    CHECK_THROWS_AS(env.env_step({}), std::invalid_argument);  // missing
    std::map<VehicleId, Action> bad;
    for (VehicleId id : env.awaiting()) bad[id] = Action::Go;
    bad[999999] = Action::Go;  // unknown extra
    CHECK_THROWS_AS(env.env_step(bad), std::invalid_argument);
}

TEST_CASE("env: identical seeds and action streams give identical rewards") {
    const Network net = builtin_fourway(1);
    auto run = [&](std::uint64_t seed) {
        TrafficEnv env(net, episode(net, 1500, 0.6, 150, seed), {ControllerKind::Rl, {}});
        std::vector<double> rewards;
        while (!env.done()) {
            std::map<VehicleId, Action> acts;
            for (VehicleId id : env.awaiting())
                acts[id] = (id % 3 == 0) ? Action::Stop : Action::Go;  // fixed policy
            const auto res = env.env_step(acts);
            for (const auto& [id, r] : res.rewards) rewards.push_back(r);
        }
        return rewards;
    };
    const auto a = run(11);
    CHECK(a == run(11));
    CHECK(!a.empty());
}

TEST_CASE("env: smoke run at 10% robots completes traffic") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 900, 0.1, 1000, 21), {ControllerKind::Rl, {}});
    int steps = 0;
    while (!env.done() && steps < 2000) {
        std::map<VehicleId, Action> acts;
        for (VehicleId id : env.awaiting()) acts[id] = Action::Go;
        env.env_step(acts);
        ++steps;
    }
    CHECK(env.sim().completed.size() > 0);
}

TEST_CASE("env: conflict penalties reach every robot party to a flagged pair") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 0, 0.5, 100, 1), {ControllerKind::Rl, {}});
    SimState& sim = env.sim_mutable();
    const int nt = net.movement_index("N_T");
    const int et = net.movement_index("E_T");
    const VehicleId a = put_vehicle(sim, nt, Phase::Inside, 1.0, 5.0, Role::Robot);
    const VehicleId b = put_vehicle(sim, et, Phase::Inside, 1.0, 5.0, Role::Robot);

    const auto res = env.env_step({});
    REQUIRE(res.events.conflicts.size() == 1);
    CHECK(res.trailing_penalties.at(a) == doctest::Approx(-1.0));
    CHECK(res.trailing_penalties.at(b) == doctest::Approx(-1.0));

    // non-conflicting box occupants draw no penalty
    TrafficEnv env2(net, episode(net, 0, 0.5, 100, 1), {ControllerKind::Rl, {}});
    SimState& sim2 = env2.sim_mutable();
    const int st = net.movement_index("S_T");
    put_vehicle(sim2, nt, Phase::Inside, 1.0, 5.0, Role::Robot);
    put_vehicle(sim2, st, Phase::Inside, 1.0, 5.0, Role::Robot);
    const auto res2 = env2.env_step({});
    CHECK(res2.events.conflicts.empty());
    CHECK(res2.trailing_penalties.empty());
}

TEST_CASE("env: observation dimension is constant across an episode") {
    const Network net = builtin_fourway(1);
    TrafficEnv env(net, episode(net, 2500, 0.8, 100, 9), {ControllerKind::Rl, {}});
    const std::size_t want = static_cast<std::size_t>(env.observation_dim());
    while (!env.done()) {
        std::map<VehicleId, Action> acts;
        std::map<VehicleId, Observation> obs;
        for (VehicleId id : env.awaiting()) acts[id] = Action::Go;
        const auto res = env.env_step(acts);
        for (const auto& [id, ob] : res.observations) {
            CHECK(ob.dim() == want);
            CHECK(ob.d_int >= 0.0);
            CHECK(ob.d_int <= net.control_zone + 1e-9);
        }
    }
}
