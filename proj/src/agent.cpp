#include "crossflow/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossflow/util.hpp"

namespace crossflow {

void ReplayBuffer::push(Transition t) {
    if (capacity_ == 0) return;
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[head_] = std::move(t);  // overwrite the oldest entry
        head_ = (head_ + 1) % capacity_;
    }
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t k, Rng& rng) const {
    std::vector<std::size_t> idx(k);
    for (auto& i : idx) i = rng.uniform_int(data_.size());
    return idx;
}

void RunningNorm::update(std::span<const double> x) {
    if (mean.size() != x.size()) {
        mean.assign(x.size(), 0.0);
        m2.assign(x.size(), 0.0);
        count = 0;
    }
    ++count;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        mean[i] += d / static_cast<double>(count);
        m2[i] += d * (x[i] - mean[i]);
    }
}

double RunningNorm::stddev(std::size_t i) const {
    if (count < 2) return 1.0;
    return std::sqrt(std::max(m2[i] / static_cast<double>(count - 1), 1e-12));
}

std::vector<double> RunningNorm::normalize(std::span<const double> x) const {
    std::vector<double> out(x.size());
    if (count < 2 || mean.size() != x.size()) {
        std::copy(x.begin(), x.end(), out.begin());
        return out;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double s = stddev(i);
        out[i] = (x[i] - mean[i]) / (s > 1e-6 ? s : 1.0);
    }
    return out;
}

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError("train: learning_rate must be > 0");
    if (gamma < 0 || gamma >= 1) throw ConfigError("train: gamma must be in [0, 1)");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (batch_size <= 0) throw ConfigError("train: batch_size must be > 0");
    if (replay_capacity == 0) throw ConfigError("train: replay_capacity must be > 0");
    if (n_step < 1) throw ConfigError("train: n_step must be >= 1");
    if (eps_start < 0 || eps_start > 1 || eps_end < 0 || eps_end > 1)
        throw ConfigError("train: epsilon bounds must be in [0, 1]");
    if (hidden.empty()) throw ConfigError("train: at least one hidden layer required");
}

std::string TrainConfig::fingerprint_text() const {
    std::ostringstream out;
    out << "lr=" << fmt_double(learning_rate) << ";gamma=" << fmt_double(gamma)
        << ";iters=" << iterations << ";batch=" << batch_size << ";cap=" << replay_capacity
        << ";warmup=" << warmup << ";sync=" << target_sync_interval
        << ";eps=" << fmt_double(eps_start) << ":" << fmt_double(eps_end) << ":" << eps_decay_steps
        << ";n=" << n_step << ";double=" << double_dqn << ";dueling=" << dueling << ";hidden=";
    for (int h : hidden) out << h << ",";
    return out.str();
}

std::vector<double> td_targets(const ReplayBuffer& buffer, std::span<const std::size_t> idx,
                               const RunningNorm& norm, const QNetwork& online,
                               const QNetwork& target, double gamma, bool double_dqn) {
    std::vector<double> out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const Transition& t = buffer.at(idx[k]);
        double y = t.reward_n;
        if (!t.done) {
            const auto next = norm.normalize(t.next_obs);
            const auto qt = target.forward(next);
            int a;
            if (double_dqn) {
                const auto qo = online.forward(next);
                a = qo[1] >= qo[0] ? 1 : 0;
            } else {
                a = qt[1] >= qt[0] ? 1 : 0;
            }
            y += std::pow(gamma, t.steps) * qt[a];
        }
        out[k] = y;
    }
    return out;
}

Action select_action(const std::array<double, 2>& q, double epsilon, Rng& rng) {
    if (epsilon < 0 || epsilon > 1) throw std::invalid_argument("select_action: epsilon in [0,1]");
    if (epsilon > 0 && rng.bernoulli(epsilon))
        return rng.uniform_int(2) == 0 ? Action::Stop : Action::Go;
    return q[1] >= q[0] ? Action::Go : Action::Stop;  // tie resolves to Go
}

// ---------------------------------------------------------------------------
// Checkpoint format (binary, little-endian, version 1):
//   magic "CFQN", u32 version, u8 dueling, i32 input_dim, i32 n_hidden,
//   i32 hidden sizes..., u64 norm count, f64 mean[], f64 m2[],
//   u64 config fingerprint, f64 parameters in layer order (w then b).
// ---------------------------------------------------------------------------

namespace {

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& s, std::size_t& pos) {
    if (pos + sizeof(T) > s.size()) throw ConfigError("checkpoint: truncated file");
    T v;
    std::memcpy(&v, s.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

constexpr char kMagic[4] = {'C', 'F', 'Q', 'N'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint8_t>(out, c.net.dueling ? 1 : 0);
    put<std::int32_t>(out, c.net.input_dim);
    put<std::int32_t>(out, static_cast<std::int32_t>(c.net.hidden.size()));
    for (int h : c.net.hidden) put<std::int32_t>(out, h);
    put<std::uint64_t>(out, c.norm.count);
    if (c.norm.mean.size() != static_cast<std::size_t>(c.net.input_dim))
        throw ConfigError("checkpoint: normalization dimension mismatch");
    for (double v : c.norm.mean) put<double>(out, v);
    for (double v : c.norm.m2) put<double>(out, v);
    put<std::uint64_t>(out, c.config_fingerprint);
    const_cast<QNetwork&>(c.net).for_each_param([&](double& p) { put<double>(out, p); });
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path, std::optional<int> expected_input_dim) {
    const std::string s = read_file(path);
    std::size_t pos = 0;
    if (s.size() < 4 || std::memcmp(s.data(), kMagic, 4) != 0)
        throw ConfigError("checkpoint: bad magic in '" + path + "'");
    pos = 4;
    const auto version = take<std::uint32_t>(s, pos);
    if (version != kVersion)
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    const bool dueling = take<std::uint8_t>(s, pos) != 0;
    const int input_dim = take<std::int32_t>(s, pos);
    if (input_dim <= 0) throw ConfigError("checkpoint: corrupt input dimension");
    const int n_hidden = take<std::int32_t>(s, pos);
    if (n_hidden < 0 || n_hidden > 64) throw ConfigError("checkpoint: corrupt layer count");
    std::vector<int> hidden(n_hidden);
    for (int& h : hidden) h = take<std::int32_t>(s, pos);

    Checkpoint c;
    c.net = QNetwork::zeros(input_dim, hidden, dueling);
    c.norm = RunningNorm(input_dim);
    c.norm.count = take<std::uint64_t>(s, pos);
    for (double& v : c.norm.mean) v = take<double>(s, pos);
    for (double& v : c.norm.m2) v = take<double>(s, pos);
    c.config_fingerprint = take<std::uint64_t>(s, pos);
    c.net.for_each_param([&](double& p) { p = take<double>(s, pos); });
    if (pos != s.size()) throw ConfigError("checkpoint: trailing bytes in '" + path + "'");
    if (expected_input_dim && *expected_input_dim != input_dim)
        throw ConfigError("checkpoint: input dimension " + std::to_string(input_dim) +
                          " does not match environment dimension " +
                          std::to_string(*expected_input_dim));
    return c;
}

std::string curve_to_csv(std::span<const IterationStats> curve) {
    std::ostringstream out;
    out << "iteration,mean_reward,mean_wait,epsilon\n";
    for (const auto& s : curve)
        out << s.iteration << "," << fmt_double(s.mean_reward) << "," << fmt_double(s.mean_wait)
            << "," << fmt_double(s.epsilon) << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

// Open decision history of one robot, oldest first.
struct PendingDecision {
    std::vector<double> obs;
    int action = 0;
    double reward = 0.0;
};

struct RobotTrack {
    std::deque<PendingDecision> pending;
};

// Emits the head transition once n future decisions are known.
void emit_ready(RobotTrack& tr, int n, double gamma, ReplayBuffer& buffer) {
    while (tr.pending.size() > static_cast<std::size_t>(n)) {
        Transition t;
        t.obs = tr.pending.front().obs;
        t.action = tr.pending.front().action;
        t.steps = n;
        double r = 0.0;
        for (int i = 0; i < n; ++i) r += std::pow(gamma, i) * tr.pending[i].reward;
        t.reward_n = r;
        t.next_obs = tr.pending[n].obs;
        t.done = false;
        buffer.push(std::move(t));
        tr.pending.pop_front();
    }
}

// Flushes everything left as terminal transitions (robot exited or episode
// ended).
void flush_terminal(RobotTrack& tr, double gamma, ReplayBuffer& buffer) {
    while (!tr.pending.empty()) {
        Transition t;
        t.obs = tr.pending.front().obs;
        t.action = tr.pending.front().action;
        t.steps = static_cast<int>(tr.pending.size());
        double r = 0.0;
        for (std::size_t i = 0; i < tr.pending.size(); ++i)
            r += std::pow(gamma, static_cast<double>(i)) * tr.pending[i].reward;
        t.reward_n = r;
        t.done = true;
        buffer.push(std::move(t));
        tr.pending.pop_front();
    }
}

}  // namespace

TrainResult train(const EnvFactory& factory, const TrainConfig& cfg, std::uint64_t seed,
                  const std::string& checkpoint_dir) {
    cfg.validate();
    Rng policy_rng = Rng(seed).fork(0x51);
    Rng sample_rng = Rng(seed).fork(0x52);
    Rng init_rng = Rng(seed).fork(0x53);

    auto probe = factory(seed);
    const int obs_dim = probe->observation_dim();
    probe.reset();

    TrainResult result;
    QNetwork online = QNetwork::init(obs_dim, cfg.hidden, cfg.dueling, init_rng);
    QNetwork target = online;
    QNetwork grad = QNetwork::zeros(obs_dim, cfg.hidden, cfg.dueling);
    AdamOptimizer opt(cfg.learning_rate);
    ReplayBuffer buffer(cfg.replay_capacity);
    RunningNorm norm(obs_dim);
    const std::uint64_t fingerprint = fnv1a(cfg.fingerprint_text());

    QNetwork last_good = online;
    RunningNorm last_good_norm = norm;
    std::uint64_t decisions = 0;
    std::uint64_t updates = 0;

    auto epsilon_at = [&](std::uint64_t k) {
        if (cfg.eps_decay_steps == 0) return cfg.eps_end;
        const double f = std::min(1.0, static_cast<double>(k) / cfg.eps_decay_steps);
        return cfg.eps_start + f * (cfg.eps_end - cfg.eps_start);
    };

    std::vector<std::vector<double>> norm_batch;
    std::vector<BatchSample> batch;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        auto env = factory(Rng(seed).fork(1000 + iter).next_u64());
        auto obs = env->reset();
        std::map<VehicleId, RobotTrack> tracks;
        double reward_sum = 0.0;
        std::size_t reward_count = 0;
        bool non_finite = false;

        while (!env->done()) {
            std::map<VehicleId, Action> actions;
            for (const auto& [id, ob] : obs) {
                const auto raw = ob.flatten();
                norm.update(raw);
                const auto q = online.forward(norm.normalize(raw));
                const double eps = epsilon_at(decisions);
                const Action a = select_action(q, eps, policy_rng);
                actions[id] = a;
                tracks[id].pending.push_back({raw, static_cast<int>(a), 0.0});
                ++decisions;
            }

            auto res = env->env_step(actions);

            for (const auto& [id, r] : res.rewards) {
                auto& tr = tracks[id];
                if (!tr.pending.empty()) tr.pending.back().reward += r;
                reward_sum += r;
                ++reward_count;
            }
            for (const auto& [id, r] : res.trailing_penalties) {
                auto it = tracks.find(id);
                if (it != tracks.end() && !it->second.pending.empty())
                    it->second.pending.back().reward += r;
                reward_sum += r;
                ++reward_count;
            }
            for (auto& [id, tr] : tracks) emit_ready(tr, cfg.n_step, cfg.gamma, buffer);
            for (const auto& rec : res.events.exited) {
                if (rec.role != Role::Robot) continue;
                auto it = tracks.find(rec.id);
                if (it != tracks.end()) {
                    flush_terminal(it->second, cfg.gamma, buffer);
                    tracks.erase(it);
                }
            }

            if (buffer.size() >= std::max<std::size_t>(cfg.warmup, cfg.batch_size)) {
                for (int u = 0; u < cfg.updates_per_step; ++u) {
                    const auto idx = buffer.sample(cfg.batch_size, sample_rng);
                    const auto targets =
                        td_targets(buffer, idx, norm, online, target, cfg.gamma, cfg.double_dqn);
                    norm_batch.clear();
                    batch.clear();
                    for (std::size_t k = 0; k < idx.size(); ++k)
                        norm_batch.push_back(norm.normalize(buffer.at(idx[k]).obs));
                    for (std::size_t k = 0; k < idx.size(); ++k)
                        batch.push_back({norm_batch[k], buffer.at(idx[k]).action, targets[k]});
                    batch_gradients(online, batch, grad);
                    opt.step(online, grad);
                    ++updates;
                    if (cfg.target_sync_interval > 0 &&
                        updates % static_cast<std::uint64_t>(cfg.target_sync_interval) == 0)
                        target = online;
                }
                if (!online.finite()) {
                    non_finite = true;
                    break;
                }
            }

            obs = std::move(res.observations);
            if (res.done) break;
        }

        // episode over: flush open robot histories as terminal
        for (auto& [id, tr] : tracks) flush_terminal(tr, cfg.gamma, buffer);
        tracks.clear();

        if (non_finite) {
            result.aborted_non_finite = true;
            result.checkpoint = {last_good, last_good_norm, fingerprint};
            if (!checkpoint_dir.empty())
                save_checkpoint(result.checkpoint, checkpoint_dir + "/checkpoint.bin");
            return result;
        }

        IterationStats st;
        st.iteration = iter;
        st.mean_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
        st.mean_wait = avg_waiting_time(env->sim().completed).value;
        st.epsilon = epsilon_at(decisions);
        result.curve.push_back(st);

        last_good = online;
        last_good_norm = norm;
        if (!checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
            (iter + 1) % cfg.checkpoint_every == 0)
            save_checkpoint({online, norm, fingerprint},
                            checkpoint_dir + "/checkpoint_iter" + std::to_string(iter + 1) + ".bin");
    }

    result.checkpoint = {online, norm, fingerprint};
    if (!checkpoint_dir.empty())
        save_checkpoint(result.checkpoint, checkpoint_dir + "/checkpoint.bin");
    return result;
}

EpisodeRollout run_episode(TrafficEnv& env, const Checkpoint* policy, double headway_cadence_s) {
    EpisodeRollout out;
    auto obs = env.reset();
    if (policy && policy->net.input_dim != env.observation_dim())
        throw ConfigError("checkpoint: input dimension " + std::to_string(policy->net.input_dim) +
                          " does not match environment dimension " +
                          std::to_string(env.observation_dim()));
    Rng dummy(1);  // epsilon = 0: never consulted for exploration draws
    double next_headway_sample = 0.0;
    double reward_sum = 0.0;

    while (!env.done()) {
        if (env.time() >= next_headway_sample - 1e-9) {
            const auto pairs = collect_headway_pairs(env.sim());
            out.headways.insert(out.headways.end(), pairs.begin(), pairs.end());
            next_headway_sample += headway_cadence_s;
        }
        std::map<VehicleId, Action> actions;
        if (policy) {
            for (const auto& [id, ob] : obs) {
                const auto q = policy->net.forward(policy->norm.normalize(ob.flatten()));
                actions[id] = select_action(q, 0.0, dummy);
                ++out.decisions;
            }
        } else if (!obs.empty()) {
            throw ConfigError("run_episode: environment requests decisions but no policy given");
        }
        auto res = env.env_step(actions);
        for (const auto& [id, r] : res.rewards) reward_sum += r;
        for (const auto& [id, r] : res.trailing_penalties) reward_sum += r;
        out.conflicts += res.events.conflicts.size();
        out.safety_flags += res.events.safety_flags.size();
        obs = std::move(res.observations);
        if (res.done) break;
    }
    out.completed = env.sim().completed;
    out.mean_reward = out.decisions ? reward_sum / static_cast<double>(out.decisions) : 0.0;
    return out;
}

EvalResult evaluate(const Checkpoint& c, const EnvFactory& factory, int runs,
                    double headway_cadence_s) {
    if (runs <= 0) throw ConfigError("evaluate: runs must be > 0");
    EvalResult out;
    for (int r = 0; r < runs; ++r) {
        auto env = factory(static_cast<std::uint64_t>(r));
        out.runs.push_back(run_episode(*env, &c, headway_cadence_s));
    }
    return out;
}

}  // namespace crossflow
