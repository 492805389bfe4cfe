#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "crossflow/agent.hpp"
#include "crossflow/util.hpp"

using namespace crossflow;

namespace {

// Plain matrix-arithmetic re-implementation of the forward pass.
std::array<double, 2> forward_reference(const QNetwork& n, const std::vector<double>& x) {
    std::vector<double> h = x;
    for (const auto& l : n.hidden_layers) {
        std::vector<double> nh(l.out, 0.0);
        for (int o = 0; o < l.out; ++o) {
            double acc = l.b[o];
            for (int i = 0; i < l.in; ++i) acc += l.w[o * l.in + i] * h[i];
            nh[o] = acc > 0 ? acc : 0;
        }
        h = nh;
    }
    auto head = [&](const QNetwork::Layer& l) {
        std::vector<double> out(l.out, 0.0);
        for (int o = 0; o < l.out; ++o) {
            double acc = l.b[o];
            for (int i = 0; i < l.in; ++i) acc += l.w[o * l.in + i] * h[i];
            out[o] = acc;
        }
        return out;
    };
    if (!n.dueling) {
        const auto q = head(n.out);
        return {q[0], q[1]};
    }
    const auto v = head(n.value);
    const auto a = head(n.adv);
    const double m = (a[0] + a[1]) / 2;
    return {v[0] + a[0] - m, v[0] + a[1] - m};
}

std::vector<double> random_obs(int dim, Rng& rng) {
    std::vector<double> x(dim);
    for (double& v : x) v = rng.uniform(-2.0, 2.0);
    return x;
}

double single_loss(const QNetwork& net, const std::vector<double>& x, int action, double target) {
    const auto q = net.forward(x);
    const double e = q[action] - target;
    return e * e;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

TEST_CASE("forward: zero-initialized network outputs (0, 0)") {
    for (bool dueling : {false, true}) {
        QNetwork n = QNetwork::zeros(6, {8, 8}, dueling);
        const auto q = n.forward(std::vector<double>{1, -1, 2, 0.5, 3, -2});
        CHECK(q[0] == 0.0);
        CHECK(q[1] == 0.0);
    }
}

TEST_CASE("forward: constant advantage collapses to the value head") {
    QNetwork n = QNetwork::zeros(4, {8}, true);
    n.value.b[0] = 1.75;
    n.adv.b = {0.4, 0.4};  // A identical across actions
    const auto q = n.forward(std::vector<double>{0, 0, 0, 0});
    CHECK(q[0] == doctest::Approx(1.75).epsilon(1e-15));
    CHECK(q[1] == doctest::Approx(1.75).epsilon(1e-15));
}

TEST_CASE("forward: matches an independent matrix-arithmetic evaluation") {
    Rng rng(2024);
    for (bool dueling : {false, true}) {
        QNetwork n = QNetwork::init(7, {16, 8}, dueling, rng);
        for (int probe = 0; probe < 50; ++probe) {
            const auto x = random_obs(7, rng);
            const auto got = n.forward(x);
            const auto ref = forward_reference(n, x);
            CHECK(std::abs(got[0] - ref[0]) < 1e-10);
            CHECK(std::abs(got[1] - ref[1]) < 1e-10);
        }
    }
}

TEST_CASE("forward: rejects dimension mismatches") {
    QNetwork n = QNetwork::zeros(5, {4}, true);
    CHECK_THROWS_AS(n.forward(std::vector<double>{1, 2, 3}), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

TEST_CASE("gradients: zero TD error yields zero gradients") {
    Rng rng(5);
    QNetwork n = QNetwork::init(4, {6}, true, rng);
    QNetwork g = QNetwork::zeros(4, {6}, true);
    const auto x = random_obs(4, rng);
    const auto q = n.forward(x);
    std::vector<BatchSample> batch = {{x, 0, q[0]}, {x, 1, q[1]}};
    const double loss = batch_gradients(n, batch, g);
    CHECK(loss == doctest::Approx(0.0).epsilon(1e-30));
    g.for_each_param([&](double& p) { CHECK(p == 0.0); });
}

TEST_CASE("gradients: match central finite differences") {
    Rng rng(90210);
    for (bool dueling : {false, true}) {
        QNetwork net = QNetwork::init(5, {8, 8}, dueling, rng);
        QNetwork grad = QNetwork::zeros(5, {8, 8}, dueling);
        for (int probe = 0; probe < 20; ++probe) {
            const auto x = random_obs(5, rng);
            const int action = static_cast<int>(rng.uniform_int(2));
            const double target = rng.uniform(-2, 2);
            std::vector<BatchSample> batch = {{x, action, target}};
            batch_gradients(net, batch, grad);

            std::vector<double> analytic;
            grad.for_each_param([&](double& p) { analytic.push_back(p); });

            const double h = 1e-5;
            std::size_t i = 0;
            double worst = 0.0;
            net.for_each_param([&](double& p) {
                const double keep = p;
                p = keep + h;
                const double lp = single_loss(net, x, action, target);
                p = keep - h;
                const double lm = single_loss(net, x, action, target);
                p = keep;
                const double fd = (lp - lm) / (2 * h);
                const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-8});
                worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
                ++i;
            });
            INFO("dueling=", dueling, " probe=", probe);
            CHECK(worst < 1e-4);
        }
    }
}

TEST_CASE("gradients: batch gradient is the mean of per-sample gradients") {
    Rng rng(31415);
    QNetwork net = QNetwork::init(4, {6}, true, rng);
    QNetwork gb = QNetwork::zeros(4, {6}, true);
    QNetwork gs = QNetwork::zeros(4, {6}, true);

    std::vector<std::vector<double>> xs;
    std::vector<BatchSample> batch;
    std::vector<int> acts;
    std::vector<double> targs;
    for (int k = 0; k < 5; ++k) {
        xs.push_back(random_obs(4, rng));
        acts.push_back(static_cast<int>(rng.uniform_int(2)));
        targs.push_back(rng.uniform(-1, 1));
    }
    for (int k = 0; k < 5; ++k) batch.push_back({xs[k], acts[k], targs[k]});
    batch_gradients(net, batch, gb);

    std::vector<double> mean_of_singles(net.param_count(), 0.0);
    for (int k = 0; k < 5; ++k) {
        std::vector<BatchSample> one = {{xs[k], acts[k], targs[k]}};
        batch_gradients(net, one, gs);
        std::size_t i = 0;
        gs.for_each_param([&](double& p) { mean_of_singles[i++] += p / 5.0; });
    }
    std::size_t i = 0;
    gb.for_each_param([&](double& p) {
        CHECK(p == doctest::Approx(mean_of_singles[i]).epsilon(1e-12));
        ++i;
    });
}

// ---------------------------------------------------------------------------
// Targets and action selection
// ---------------------------------------------------------------------------

TEST_CASE("td targets: terminal transitions use the reward head exactly") {
    ReplayBuffer buf(8);
    Transition t;
    t.obs = {1, 2};
    t.action = 0;
    t.reward_n = -1.0;
    t.steps = 3;
    t.done = true;
    buf.push(t);
    RunningNorm norm(2);
    Rng rng(1);
    QNetwork online = QNetwork::init(2, {4}, true, rng);
    QNetwork target = QNetwork::init(2, {4}, true, rng);
    const std::size_t idx[] = {0};
    const auto y = td_targets(buf, idx, norm, online, target, 0.99, true);
    CHECK(y[0] == -1.0);
}

TEST_CASE("td targets: gamma = 0 reduces to the immediate reward head") {
    ReplayBuffer buf(8);
    Transition t;
    t.obs = {1, 2};
    t.next_obs = {0.5, -0.5};
    t.action = 1;
    t.reward_n = 0.75;
    t.steps = 2;
    t.done = false;
    buf.push(t);
    RunningNorm norm(2);
    Rng rng(2);
    QNetwork online = QNetwork::init(2, {4}, true, rng);
    QNetwork target = QNetwork::init(2, {4}, true, rng);
    const std::size_t idx[] = {0};
    const auto y = td_targets(buf, idx, norm, online, target, 0.0, true);
    CHECK(y[0] == doctest::Approx(0.75));
}

TEST_CASE("td targets: double and vanilla differ exactly when the argmaxes disagree") {
    RunningNorm norm(1);
    // nets with one input, no hidden nonlinearity interference: use bias-only
    QNetwork online = QNetwork::zeros(1, {2}, false);
    QNetwork target = QNetwork::zeros(1, {2}, false);
    // target prefers action 0, online prefers action 1
    target.out.b = {2.0, 1.0};
    online.out.b = {0.0, 3.0};

    ReplayBuffer buf(4);
    Transition t;
    t.obs = {0.0};
    t.next_obs = {0.0};
    t.action = 0;
    t.reward_n = 0.0;
    t.steps = 1;
    t.done = false;
    buf.push(t);
    const std::size_t idx[] = {0};
    const auto vanilla = td_targets(buf, idx, norm, online, target, 0.9, false);
    const auto dble = td_targets(buf, idx, norm, online, target, 0.9, true);
    CHECK(vanilla[0] == doctest::Approx(0.9 * 2.0));  // target's own argmax (action 0)
    CHECK(dble[0] == doctest::Approx(0.9 * 1.0));     // online picks 1, target values it

    // agreeing argmaxes -> identical targets
    online.out.b = {3.0, 0.0};
    const auto v2 = td_targets(buf, idx, norm, online, target, 0.9, false);
    const auto d2 = td_targets(buf, idx, norm, online, target, 0.9, true);
    CHECK(v2[0] == d2[0]);
}

TEST_CASE("select_action: exploration statistics and greedy behavior") {
    Rng rng(808);
    int go = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (select_action({0.0, 0.0}, 1.0, rng) == Action::Go) ++go;
    CHECK(std::abs(go / static_cast<double>(n) - 0.5) < 0.01);

    CHECK(select_action({0.2, 0.7}, 0.0, rng) == Action::Go);
    CHECK(select_action({0.7, 0.2}, 0.0, rng) == Action::Stop);
    CHECK(select_action({0.4, 0.4}, 0.0, rng) == Action::Go);  // tie -> Go
}

// ---------------------------------------------------------------------------
// Replay, normalization, optimizer
// ---------------------------------------------------------------------------

TEST_CASE("replay buffer: bounded capacity with oldest-first eviction") {
    ReplayBuffer buf(3);
    for (int k = 0; k < 5; ++k) {
        Transition t;
        t.obs = {static_cast<double>(k)};
        buf.push(t);
        CHECK(buf.size() <= 3);
    }
    // slots now hold 3, 4 (overwrote 0, 1) and 2
    std::vector<double> left;
    for (std::size_t i = 0; i < buf.size(); ++i) left.push_back(buf.at(i).obs[0]);
    std::sort(left.begin(), left.end());
    CHECK(left == std::vector<double>{2, 3, 4});
}

TEST_CASE("running norm: matches two-pass mean and standard deviation") {
    RunningNorm norm(1);
    const std::vector<double> xs = {2, 4, 4, 4, 5, 5, 7, 9};
    for (double x : xs) norm.update(std::vector<double>{x});
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (xs.size() - 1));
    CHECK(norm.mean[0] == doctest::Approx(mean));
    CHECK(norm.stddev(0) == doctest::Approx(sd));
    const auto z = norm.normalize(std::vector<double>{mean + sd});
    CHECK(z[0] == doctest::Approx(1.0));
}

TEST_CASE("optimizer sanity: loss non-increasing on a fixed batch at lr 1e-4") {
    Rng rng(606);
    QNetwork net = QNetwork::init(6, {16, 16}, true, rng);
    QNetwork grad = QNetwork::zeros(6, {16, 16}, true);
    AdamOptimizer opt(1e-4);

    std::vector<std::vector<double>> xs;
    std::vector<BatchSample> batch;
    std::vector<int> acts;
    std::vector<double> targs;
    for (int k = 0; k < 16; ++k) {
        xs.push_back(random_obs(6, rng));
        acts.push_back(static_cast<int>(rng.uniform_int(2)));
        targs.push_back(rng.uniform(-1, 1));
    }
    for (int k = 0; k < 16; ++k) batch.push_back({xs[k], acts[k], targs[k]});

    double prev = batch_gradients(net, batch, grad);
    for (int step = 0; step < 50; ++step) {
        opt.step(net, grad);
        const double loss = batch_gradients(net, batch, grad);
        CHECK(loss <= prev + 1e-12);
        prev = loss;
    }
}

TEST_CASE("target sync: outputs identical immediately after copying") {
    Rng rng(11);
    QNetwork online = QNetwork::init(5, {8}, true, rng);
    QNetwork target = QNetwork::init(5, {8}, true, rng);
    target = online;
    for (int probe = 0; probe < 10; ++probe) {
        const auto x = random_obs(5, rng);
        const auto a = online.forward(x);
        const auto b = target.forward(x);
        CHECK(a[0] == b[0]);
        CHECK(a[1] == b[1]);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint: bit-exact round trip and byte-stable saves") {
    Rng rng(22);
    Checkpoint c;
    c.net = QNetwork::init(9, {12, 7}, true, rng);
    c.norm = RunningNorm(9);
    for (int k = 0; k < 5; ++k) c.norm.update(random_obs(9, rng));
    c.config_fingerprint = 0xfeedbeef;

    const std::string dir = std::filesystem::temp_directory_path() / "cf_ckpt_test";
    std::filesystem::create_directories(dir);
    save_checkpoint(c, dir + "/a.bin");
    save_checkpoint(c, dir + "/b.bin");
    CHECK(read_file(dir + "/a.bin") == read_file(dir + "/b.bin"));

    const Checkpoint back = load_checkpoint(dir + "/a.bin");
    CHECK(back.config_fingerprint == c.config_fingerprint);
    CHECK(back.norm.count == c.norm.count);
    for (int probe = 0; probe < 10; ++probe) {
        const auto x = random_obs(9, rng);
        const auto a = c.net.forward(c.norm.normalize(x));
        const auto b = back.net.forward(back.norm.normalize(x));
        CHECK(a[0] == b[0]);  // zero-ulp
        CHECK(a[1] == b[1]);
    }
}

TEST_CASE("checkpoint: dimension and corruption errors are explicit") {
    Rng rng(23);
    Checkpoint c;
    c.net = QNetwork::init(4, {5}, false, rng);
    c.norm = RunningNorm(4);
    const std::string dir = std::filesystem::temp_directory_path() / "cf_ckpt_test2";
    std::filesystem::create_directories(dir);
    const std::string path = dir + "/c.bin";
    save_checkpoint(c, path);

    CHECK_THROWS_WITH_AS(load_checkpoint(path, 10), doctest::Contains("dimension"), ConfigError);
    CHECK_NOTHROW(load_checkpoint(path, 4));

    write_file(dir + "/junk.bin", "not a checkpoint");
    CHECK_THROWS_AS(load_checkpoint(dir + "/junk.bin"), ConfigError);

    std::string truncated = read_file(path);
    truncated.resize(truncated.size() / 2);
    write_file(dir + "/short.bin", truncated);
    CHECK_THROWS_AS(load_checkpoint(dir + "/short.bin"), ConfigError);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

Network toy_crossing() {
    Network net;
    net.control_zone = 30;
    net.approaches = {{"A", 120, 1, 15}, {"B", 120, 1, 15}};
    Movement ab{"AB", 0, 0, 1, 0, 12.0};
    Movement ba{"BA", 1, 0, 0, 1, 12.0};
    net.movements = {ab, ba};
    net.conflict_matrix = {{false, true}, {true, false}};
    net.validate();
    return net;
}

EnvFactory toy_factory(const Network& net, double inflow, double rv_rate, double horizon) {
    return [&net, inflow, rv_rate, horizon](std::uint64_t seed) {
        EpisodeConfig cfg;
        cfg.horizon = horizon;
        cfg.dt = 0.5;
        cfg.demand = default_demand(net, inflow, rv_rate);
        cfg.seed = seed;
        return std::make_unique<TrafficEnv>(net, cfg, ControllerSpec{ControllerKind::Rl, {}});
    };
}

TrainConfig toy_train_config(int iterations) {
    TrainConfig tc;
    tc.iterations = iterations;
    tc.hidden = {64, 64};
    tc.replay_capacity = 50000;
    tc.warmup = 500;
    tc.batch_size = 32;
    tc.target_sync_interval = 250;
    tc.eps_decay_steps = 15000;
    tc.learning_rate = 0.0005;
    return tc;
}

}  // namespace

TEST_CASE("train: zero iterations returns an initialized checkpoint and empty curve") {
    const Network net = toy_crossing();
    const auto factory = toy_factory(net, 500, 0.6, 60);
    const auto res = train(factory, toy_train_config(0), 1);
    CHECK(res.curve.empty());
    CHECK(res.checkpoint.net.input_dim == 7);  // K=2 -> 3*2+1
    CHECK(res.checkpoint.net.finite());
}

TEST_CASE("train: identical seeds give identical training curves") {
    const Network net = toy_crossing();
    const auto factory = toy_factory(net, 700, 0.6, 60);
    const auto a = train(factory, toy_train_config(4), 99);
    const auto b = train(factory, toy_train_config(4), 99);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
        CHECK(a.curve[i].mean_reward == b.curve[i].mean_reward);
        CHECK(a.curve[i].mean_wait == b.curve[i].mean_wait);
        CHECK(a.curve[i].epsilon == b.curve[i].epsilon);
    }
    const auto c = train(factory, toy_train_config(4), 100);
    bool all_equal = a.curve.size() == c.curve.size();
    if (all_equal)
        for (std::size_t i = 0; i < a.curve.size(); ++i)
            all_equal = all_equal && a.curve[i].mean_reward == c.curve[i].mean_reward;
    CHECK_FALSE(all_equal);
}

TEST_CASE("train: waiting time improves on the toy crossing and beats a random policy") {
    const Network net = toy_crossing();
    const auto factory = toy_factory(net, 2400, 0.6, 150);
    const auto res = train(factory, toy_train_config(200), 7);
    REQUIRE(res.curve.size() == 200);
    CHECK_FALSE(res.aborted_non_finite);

    double first = 0, last = 0;
    for (int i = 0; i < 20; ++i) {
        first += res.curve[i].mean_wait / 20.0;
        last += res.curve[200 - 20 + i].mean_wait / 20.0;
    }
    INFO("first-20 mean wait ", first, " vs final-20 ", last);
    CHECK(last < first);

    // greedy evaluation: trained beats an untrained (randomly initialized) policy
    Rng rng(55);
    Checkpoint random_policy;
    random_policy.net = QNetwork::init(res.checkpoint.net.input_dim, {64, 64}, true, rng);
    random_policy.norm = res.checkpoint.norm;

    const auto trained_eval = evaluate(res.checkpoint, factory, 3);
    const auto random_eval = evaluate(random_policy, factory, 3);
    auto mean_wait = [](const EvalResult& e) {
        double acc = 0;
        for (const auto& run : e.runs) acc += avg_waiting_time(run.completed).value;
        return acc / static_cast<double>(e.runs.size());
    };
    const double trained_w = mean_wait(trained_eval);
    const double random_w = mean_wait(random_eval);
    INFO("trained ", trained_w, " vs random ", random_w);
    CHECK(trained_w < random_w);
}

TEST_CASE("evaluate: fixed seed is deterministic; aggregate is the mean of runs") {
    const Network net = toy_crossing();
    const auto factory = toy_factory(net, 2000, 0.6, 120);
    const auto res = train(factory, toy_train_config(2), 3);
    const auto e1 = evaluate(res.checkpoint, factory, 1);
    const auto e2 = evaluate(res.checkpoint, factory, 1);
    REQUIRE(e1.runs.size() == 1);
    CHECK(avg_waiting_time(e1.runs[0].completed).value ==
          avg_waiting_time(e2.runs[0].completed).value);
    CHECK(e1.runs[0].completed.size() == e2.runs[0].completed.size());

    const auto e10 = evaluate(res.checkpoint, factory, 4);
    std::vector<ReportRow> rows;
    for (std::size_t r = 0; r < e10.runs.size(); ++r) {
        const auto rr = summarize_run(std::to_string(r), 0.6, "RL", e10.runs[r].completed,
                                      e10.runs[r].headways, builtin_vehicle_types());
        rows.insert(rows.end(), rr.begin(), rr.end());
    }
    const auto agg = aggregate_rows(rows);
    double weighted = 0;
    std::size_t n = 0;
    for (const auto& row : rows)
        if (row.vehicle_type == "all") {
            weighted += row.w_avg * static_cast<double>(row.n);
            n += row.n;
        }
    REQUIRE(n > 0);
    for (const auto& row : agg)
        if (row.vehicle_type == "all")
            CHECK(row.w_avg == doctest::Approx(weighted / static_cast<double>(n)));
}

TEST_CASE("evaluate: incompatible checkpoint dimensions are rejected") {
    const Network net = toy_crossing();
    const auto factory = toy_factory(net, 500, 0.6, 30);
    Rng rng(1);
    Checkpoint wrong;
    wrong.net = QNetwork::init(99, {8}, true, rng);
    wrong.norm = RunningNorm(99);
    CHECK_THROWS_WITH_AS(evaluate(wrong, factory, 1), doctest::Contains("dimension"), ConfigError);
}

TEST_CASE("curve csv: stable header and layout") {
    std::vector<IterationStats> curve = {{0, 1.5, 30.25, 1.0}, {1, 2.0, 28.0, 0.9}};
    CHECK(curve_to_csv(curve) ==
          "iteration,mean_reward,mean_wait,epsilon\n0,1.5,30.25,1\n1,2,28,0.9\n");
}
