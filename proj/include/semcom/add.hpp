#pragma once

// Attention-aware deep diffusion (ADD) bandwidth allocator: a denoising-chain
// policy over per-user token allocations, trained against twin Q-networks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semcom/checkpoint.hpp"
#include "semcom/error.hpp"
#include "semcom/grid.hpp"
#include "semcom/metrics.hpp"
#include "semcom/nn.hpp"
#include "semcom/rng.hpp"

namespace semcom::add {

using nn::Matrix;
using nn::Vector;

inline constexpr std::size_t kStateSide = 16;
inline constexpr std::size_t kStateCells = kStateSide * kStateSide;

// ---------------------------------------------------------------------------
// MDP encoding

struct AllocState {
    std::vector<std::uint8_t> bits;     // users x 256, each user's 16x16 map row-major
    std::vector<std::size_t> info_size; // semantic information size per user, tokens
    std::vector<std::size_t> cap;       // per-user token bound
    std::vector<std::size_t> items;     // environment-specific item per user

    std::size_t users() const { return cap.size(); }
};

struct AllocAction {
    std::vector<double> tokens;    // b_i in [0, cap_i]
    std::vector<double> fraction;  // b_i / cap_i (0 when cap_i = 0)
};

// Block-wise OR pooling to 16 x 16; the source is implicitly zero-padded up
// to a multiple of 16.
inline std::vector<std::uint8_t> pool_to_state(const Grid<std::uint8_t>& mask) {
    std::vector<std::uint8_t> out(kStateCells, 0);
    if (mask.empty()) return out;
    const std::size_t bw = (mask.width() + kStateSide - 1) / kStateSide;
    const std::size_t bh = (mask.height() + kStateSide - 1) / kStateSide;
    for (std::size_t y = 0; y < mask.height(); ++y) {
        for (std::size_t x = 0; x < mask.width(); ++x) {
            if (mask(x, y)) out[(y / bh) * kStateSide + (x / bw)] = 1;
        }
    }
    return out;
}

inline Grid<std::uint8_t> pixels_to_mask(std::span<const Pixel> pixels, std::size_t width, std::size_t height) {
    Grid<std::uint8_t> m(width, height, 0);
    for (const auto& p : pixels) m(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y)) = 1;
    return m;
}

inline AllocState make_state(std::span<const Grid<std::uint8_t>> union_masks, std::span<const std::size_t> info_sizes,
                             std::span<const std::size_t> caps) {
    if (union_masks.size() != info_sizes.size() || caps.size() != info_sizes.size()) {
        throw Error("make_state: per-user inputs disagree in length");
    }
    AllocState s;
    for (std::size_t i = 0; i < union_masks.size(); ++i) {
        const auto pooled = pool_to_state(union_masks[i]);
        s.bits.insert(s.bits.end(), pooled.begin(), pooled.end());
    }
    s.info_size.assign(info_sizes.begin(), info_sizes.end());
    s.cap.assign(caps.begin(), caps.end());
    s.items.assign(caps.size(), 0);
    return s;
}

// Network input: state bits, then (info size, cap) per user divided by
// token_scale.
inline std::size_t feature_size(std::size_t users) { return users * (kStateCells + 2); }

inline Vector state_features(const AllocState& s, double token_scale) {
    const std::size_t n = s.users();
    Vector f(static_cast<Eigen::Index>(feature_size(n)));
    for (std::size_t i = 0; i < n * kStateCells; ++i) f[static_cast<Eigen::Index>(i)] = s.bits[i];
    for (std::size_t i = 0; i < n; ++i) {
        const auto base = static_cast<Eigen::Index>(n * kStateCells + 2 * i);
        f[base] = static_cast<double>(s.info_size[i]) / token_scale;
        f[base + 1] = static_cast<double>(s.cap[i]) / token_scale;
    }
    return f;
}

// ---------------------------------------------------------------------------
// Diffusion chain

struct NoiseSchedule {
    std::vector<double> beta;       // beta_t, index t-1
    std::vector<double> alpha;      // 1 - beta_t
    std::vector<double> alpha_bar;  // prod_{j<=t} alpha_j

    static NoiseSchedule linear(std::size_t steps, double beta_min, double beta_max) {
        if (steps == 0) throw ConfigError("diffusion steps must be >= 1");
        if (!(beta_min > 0 && beta_max < 1 && beta_min <= beta_max)) {
            throw ConfigError("beta schedule must satisfy 0 < beta_min <= beta_max < 1");
        }
        NoiseSchedule s;
        double prod = 1.0;
        for (std::size_t t = 0; t < steps; ++t) {
            const double b = steps == 1 ? beta_min
                                        : beta_min + (beta_max - beta_min) * static_cast<double>(t) /
                                                         static_cast<double>(steps - 1);
            s.beta.push_back(b);
            s.alpha.push_back(1.0 - b);
            prod *= 1.0 - b;
            s.alpha_bar.push_back(prod);
        }
        return s;
    }

    std::size_t steps() const { return beta.size(); }
};

// b_{t-1} = (b_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sigma_t z,
// with sigma_t = beta_t.
inline double denoise_step(double b_t, double eps_hat, double beta, double alpha_bar, double z) {
    const double alpha = 1.0 - beta;
    const double coef = beta > 0 ? beta / std::sqrt(1.0 - alpha_bar) : 0.0;
    return (b_t - coef * eps_hat) / std::sqrt(alpha) + beta * z;
}

// Sinusoidal encoding of the step index.
inline Vector time_embedding(std::size_t t, std::size_t dim) {
    Vector e(static_cast<Eigen::Index>(dim));
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(half, 1)));
        e[static_cast<Eigen::Index>(i)] = std::sin(static_cast<double>(t) * freq);
        e[static_cast<Eigen::Index>(half + i)] = std::cos(static_cast<double>(t) * freq);
    }
    if (dim % 2 == 1) e[static_cast<Eigen::Index>(dim - 1)] = static_cast<double>(t);
    return e;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct PolicyConfig {
    std::size_t users = 1;
    std::size_t state_dim = feature_size(1);
    std::size_t steps = 5;  // T
    std::size_t time_dim = 16;
    std::vector<std::size_t> hidden = {256, 256};
    double beta_min = 0.05;
    double beta_max = 0.5;
    double token_scale = 262144.0;  // divides token counts in the state features
};

enum class SampleMode { training, inference };

class DiffusionPolicy {
public:
    struct ChainCache {
        std::vector<nn::Mlp::Cache> steps;  // index k holds step t = T - k
    };

    DiffusionPolicy() = default;
    DiffusionPolicy(PolicyConfig cfg, Rng& rng)
        : cfg_(std::move(cfg)), schedule_(NoiseSchedule::linear(cfg_.steps, cfg_.beta_min, cfg_.beta_max)) {
        std::vector<std::size_t> sizes{cfg_.users + cfg_.time_dim + cfg_.state_dim};
        sizes.insert(sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
        sizes.push_back(cfg_.users);
        eps_ = nn::Mlp(sizes, rng);
        build_time_table();
    }

    const PolicyConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    nn::Mlp& eps_net() { return eps_; }
    const nn::Mlp& eps_net() const { return eps_; }

    // Number of denoising steps executed since construction.
    std::size_t denoise_count() const { return denoise_count_; }

    // Runs the chain from b_T for a batch. `noise[k]` is z for step t = T - k;
    // an empty vector means z = 0.
    Matrix chain(const Matrix& states, const Matrix& b_T, const std::vector<Matrix>& noise,
                 ChainCache* cache = nullptr) const {
        const auto n = static_cast<Eigen::Index>(cfg_.users);
        const auto batch = states.cols();
        const auto td = static_cast<Eigen::Index>(cfg_.time_dim);
        Matrix input(n + td + states.rows(), batch);
        input.bottomRows(states.rows()) = states;
        Matrix b = b_T;
        if (cache) cache->steps.assign(cfg_.steps, {});
        for (std::size_t k = 0; k < cfg_.steps; ++k) {
            const std::size_t t = cfg_.steps - k;
            input.topRows(n) = b;
            if (td > 0) input.middleRows(n, td) = time_table_[t - 1].replicate(1, batch);
            const Matrix eps = eps_.forward(input, cache ? &cache->steps[k] : nullptr);
            const double beta = schedule_.beta[t - 1];
            const double coef = beta / std::sqrt(1.0 - schedule_.alpha_bar[t - 1]);
            const double inv = 1.0 / std::sqrt(schedule_.alpha[t - 1]);
            b = inv * (b - coef * eps);
            if (!noise.empty()) b += beta * noise[k];
            ++denoise_count_;
        }
        return b;
    }

    // Backpropagates dL/db_0 through the chain (noise held fixed) into the
    // noise-prediction network.
    void chain_backward(const ChainCache& cache, const Matrix& d_b0, nn::MlpGrads& grads) const {
        const auto n = static_cast<Eigen::Index>(cfg_.users);
        Matrix g = d_b0;
        for (std::size_t k = cfg_.steps; k-- > 0;) {
            const std::size_t t = cfg_.steps - k;
            const double beta = schedule_.beta[t - 1];
            const double coef = beta / std::sqrt(1.0 - schedule_.alpha_bar[t - 1]);
            const double inv = 1.0 / std::sqrt(schedule_.alpha[t - 1]);
            const Matrix d_eps = (-inv * coef) * g;
            const Matrix d_in = eps_.backward(cache.steps[k], d_eps, grads);
            g = inv * g + d_in.topRows(n);
        }
    }

    // Training: b_T and z ~ N(0, I) plus Gaussian exploration with std
    // explore * cap. Inference: b_T = 0, z = 0, no exploration.
    AllocAction sample_action(const AllocState& state, SampleMode mode, double explore, Rng& rng) const {
        const Vector f = state_features(state, cfg_.token_scale);
        return sample_action(f, state.cap, mode, explore, rng);
    }

    AllocAction sample_action(const Vector& features, std::span<const std::size_t> caps, SampleMode mode,
                              double explore, Rng& rng) const {
        if (caps.size() != cfg_.users) throw Error("sample_action: user count mismatch");
        const auto n = static_cast<Eigen::Index>(cfg_.users);
        Matrix b_T = Matrix::Zero(n, 1);
        std::vector<Matrix> noise;
        if (mode == SampleMode::training) {
            for (Eigen::Index i = 0; i < n; ++i) b_T(i, 0) = rng.normal();
            noise.assign(cfg_.steps, Matrix::Zero(n, 1));
            for (auto& z : noise) {
                for (Eigen::Index i = 0; i < n; ++i) z(i, 0) = rng.normal();
            }
        }
        const Matrix b0 = chain(features, b_T, noise);
        AllocAction a;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double cap = static_cast<double>(caps[static_cast<std::size_t>(i)]);
            double tokens = cap * sigmoid(b0(i, 0));
            if (mode == SampleMode::training && explore > 0) tokens += explore * cap * rng.normal();
            tokens = std::clamp(tokens, 0.0, cap);
            a.tokens.push_back(tokens);
            a.fraction.push_back(cap > 0 ? tokens / cap : 0.0);
        }
        return a;
    }

    std::vector<NamedArray> to_arrays(const std::string& prefix) const;
    void load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix);

private:
    void build_time_table() {
        time_table_.clear();
        for (std::size_t t = 1; t <= cfg_.steps; ++t) time_table_.push_back(time_embedding(t, cfg_.time_dim));
    }

    PolicyConfig cfg_;
    NoiseSchedule schedule_;
    nn::Mlp eps_;
    std::vector<Vector> time_table_;
    mutable std::size_t denoise_count_ = 0;
};

// ---------------------------------------------------------------------------
// Critics

struct QTarget {
    double y = 0.0;
    int critic = 1;  // 1 or 2: the target network attaining the minimum
};

// y = R + gamma * min(Q1*, Q2*); ties go to critic 1.
inline QTarget q_target(double reward, double target1, double target2, double gamma) {
    const bool second = target2 < target1;
    return {reward + gamma * (second ? target2 : target1), second ? 2 : 1};
}

class TwinCritics {
public:
    TwinCritics() = default;
    TwinCritics(std::size_t state_dim, std::size_t users, const std::vector<std::size_t>& hidden, Rng& rng) {
        std::vector<std::size_t> sizes{state_dim + users};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(1);
        q1_ = nn::Mlp(sizes, rng);
        q2_ = nn::Mlp(sizes, rng);
        sync_targets();
    }

    void sync_targets() {
        t1_ = q1_;
        t2_ = q2_;
        ++syncs_;
    }

    std::size_t sync_count() const { return syncs_; }

    nn::Mlp& q(int i) { return i == 1 ? q1_ : q2_; }
    const nn::Mlp& q(int i) const { return i == 1 ? q1_ : q2_; }
    const nn::Mlp& target(int i) const { return i == 1 ? t1_ : t2_; }

    static Matrix join(const Matrix& states, const Matrix& fractions) {
        Matrix x(states.rows() + fractions.rows(), states.cols());
        x.topRows(states.rows()) = states;
        x.bottomRows(fractions.rows()) = fractions;
        return x;
    }

    // Per-sample targets for a batch.
    std::vector<QTarget> targets(const Matrix& states, const Matrix& fractions, std::span<const double> rewards,
                                 double gamma) const {
        const Matrix x = join(states, fractions);
        const Matrix a = t1_.forward(x);
        const Matrix b = t2_.forward(x);
        std::vector<QTarget> out;
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
            out.push_back(q_target(rewards[static_cast<std::size_t>(k)], a(0, k), b(0, k), gamma));
        }
        return out;
    }

    std::vector<NamedArray> to_arrays(const std::string& prefix) const;
    void load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix);

private:
    nn::Mlp q1_, q2_, t1_, t2_;
    std::size_t syncs_ = 0;
};

// Mean squared Bellman error over a batch, each sample regressed by the critic
// whose target attained the minimum. Accumulates gradients for both critics.
inline double critic_loss(const TwinCritics& critics, const Matrix& states, const Matrix& fractions,
                          std::span<const QTarget> targets, nn::MlpGrads& g1, nn::MlpGrads& g2) {
    const Matrix x = TwinCritics::join(states, fractions);
    const auto batch = x.cols();
    double loss = 0.0;
    for (int c = 1; c <= 2; ++c) {
        nn::Mlp::Cache cache;
        const Matrix q = critics.q(c).forward(x, &cache);
        Matrix dq = Matrix::Zero(1, batch);
        bool any = false;
        for (Eigen::Index k = 0; k < batch; ++k) {
            const auto& tg = targets[static_cast<std::size_t>(k)];
            if (tg.critic != c) continue;
            const double err = q(0, k) - tg.y;
            loss += err * err / static_cast<double>(batch);
            dq(0, k) = 2.0 * err / static_cast<double>(batch);
            any = true;
        }
        if (any) critics.q(c).backward(cache, dq, c == 1 ? g1 : g2);
    }
    return loss;
}

// -E[min(Q1, Q2)(s, sigmoid(b_0))] + action_reg * E[b_0^2] with b_T and z
// frozen; accumulates the pathwise gradient into the noise-prediction network.
// The quadratic term keeps b_0 out of the flat tails of the squash, where the
// gradient would vanish for good.
inline double policy_loss(const DiffusionPolicy& policy, const TwinCritics& critics, const Matrix& states,
                          const Matrix& b_T, const std::vector<Matrix>& noise, nn::MlpGrads& grads,
                          double action_reg = 0.0) {
    DiffusionPolicy::ChainCache chain_cache;
    const Matrix b0 = policy.chain(states, b_T, noise, &chain_cache);
    const Matrix u = b0.unaryExpr([](double v) { return sigmoid(v); });
    const Matrix x = TwinCritics::join(states, u);
    const auto batch = x.cols();
    const auto n = b0.rows();

    nn::Mlp::Cache c1, c2;
    const Matrix q1 = critics.q(1).forward(x, &c1);
    const Matrix q2 = critics.q(2).forward(x, &c2);
    Matrix d1 = Matrix::Zero(1, batch);
    Matrix d2 = Matrix::Zero(1, batch);
    double loss = 0.0;
    for (Eigen::Index k = 0; k < batch; ++k) {
        const bool second = q2(0, k) < q1(0, k);
        loss -= (second ? q2(0, k) : q1(0, k)) / static_cast<double>(batch);
        (second ? d2 : d1)(0, k) = -1.0 / static_cast<double>(batch);
    }
    auto scratch1 = critics.q(1).zero_grads();
    auto scratch2 = critics.q(2).zero_grads();
    const Matrix dx = critics.q(1).backward(c1, d1, scratch1) + critics.q(2).backward(c2, d2, scratch2);
    const Matrix du = dx.bottomRows(n);
    Matrix db0 = du.cwiseProduct(u.unaryExpr([](double v) { return v * (1.0 - v); }));
    if (action_reg > 0) {
        loss += action_reg * b0.squaredNorm() / static_cast<double>(batch);
        db0 += (2.0 * action_reg / static_cast<double>(batch)) * b0;
    }
    policy.chain_backward(chain_cache, db0, grads);
    return loss;
}

// ---------------------------------------------------------------------------
// Replay buffer

template <typename Record>
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw ConfigError("replay buffer capacity must be >= 1");
        data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
    }

    void push(Record r) {
        if (data_.size() < capacity_) {
            data_.push_back(std::move(r));
        } else {
            data_[next_] = std::move(r);
        }
        next_ = (next_ + 1) % capacity_;
    }

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const Record& operator[](std::size_t i) const { return data_[i]; }

    // Uniform sample of distinct indices (partial Fisher-Yates).
    std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
        if (batch > data_.size()) throw Error("replay buffer: batch larger than buffer");
        std::vector<std::size_t> idx(data_.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < batch; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(batch);
        return idx;
    }

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Record> data_;
};

struct Transition {
    Vector features;
    Vector fraction;
    double reward = 0.0;
};

// ---------------------------------------------------------------------------
// Environments

class AllocationEnv {
public:
    virtual ~AllocationEnv() = default;

    virtual std::size_t users() const = 0;
    virtual AllocState sample_state(Rng& rng) const = 0;

    // Per-user utility term for an integer token count; the penalty when the
    // count violates the user's bound.
    virtual double user_utility(const AllocState& s, std::size_t user, std::size_t tokens) const = 0;

    // Tabulated token breakpoints for the greedy baseline; empty when the
    // environment has no table.
    virtual std::vector<std::size_t> breakpoints(const AllocState&, std::size_t) const { return {}; }

    // Optional shared bound on the sum of allocations (0 = off).
    double global_budget = 0.0;
    double global_penalty = -500.0;

    double utility(const AllocState& s, std::span<const double> tokens) const {
        if (tokens.size() != s.users()) throw Error("utility: action size mismatch");
        if (global_budget > 0) {
            const double sum = std::accumulate(tokens.begin(), tokens.end(), 0.0);
            if (sum > global_budget) return global_penalty;
        }
        double total = 0.0;
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (!(tokens[i] >= 0)) return global_penalty;
            total += user_utility(s, i, static_cast<std::size_t>(std::floor(tokens[i])));
        }
        return total;
    }
};

// Best integer allocation by exhaustive per-user scan over [0, cap].
struct Optimum {
    std::vector<double> tokens;
    double utility = 0.0;
    bool unique = true;
};

inline Optimum exhaustive_optimum(const AllocationEnv& env, const AllocState& s) {
    Optimum o;
    for (std::size_t i = 0; i < s.users(); ++i) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        bool unique = true;
        for (std::size_t t = 0; t <= s.cap[i]; ++t) {
            const double u = env.user_utility(s, i, t);
            if (u > best) {
                best = u;
                arg = t;
                unique = true;
            } else if (u == best) {
                unique = false;
            }
        }
        o.tokens.push_back(static_cast<double>(arg));
        o.utility += best;
        o.unique = o.unique && unique;
    }
    return o;
}

// ---------------------------------------------------------------------------
// Agent and training

struct AddHyper {
    std::size_t steps = 5;          // T
    double gamma = 0.95;
    double lr = 1e-4;
    std::size_t batch_size = 64;    // N_b
    std::size_t episodes = 2000;
    std::size_t updates_per_episode = 1;
    std::vector<std::size_t> hidden = {256, 256};
    std::size_t time_dim = 16;
    double beta_min = 0.05;
    double beta_max = 0.5;
    double explore_start = 0.1;     // exploration std as a fraction of cap
    double explore_end = 0.01;
    std::size_t sync_period = 50;   // gradient steps between target syncs
    std::size_t buffer_capacity = 100000;
    double reward_scale = 1.0;      // multiplies utilities before they enter the critics
    double action_reg = 1e-3;       // L2 weight on the pre-squash action in the policy loss
    double grad_clip = 10.0;
    double token_scale = 262144.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps == 0) throw ConfigError("add: T must be >= 1");
        if (!(gamma >= 0 && gamma < 1)) throw ConfigError("add: gamma must lie in [0, 1)");
        if (!(lr > 0)) throw ConfigError("add: learning rate must be > 0");
        if (batch_size == 0 || episodes == 0 || sync_period == 0) {
            throw ConfigError("add: batch size, episodes and sync period must be >= 1");
        }
        if (buffer_capacity < batch_size) throw ConfigError("add: buffer capacity must be >= batch size");
        if (!(reward_scale > 0 && token_scale > 0)) throw ConfigError("add: reward_scale and token_scale must be > 0");
        if (explore_start < 0 || explore_end < 0) throw ConfigError("add: exploration must be >= 0");
        if (action_reg < 0) throw ConfigError("add: action_reg must be >= 0");
    }
};

struct AddAgent {
    DiffusionPolicy policy;
    TwinCritics critics;

    static AddAgent create(std::size_t users, const AddHyper& h) {
        Rng rng(h.seed, 0xADD);
        PolicyConfig pc;
        pc.users = users;
        pc.state_dim = feature_size(users);
        pc.steps = h.steps;
        pc.time_dim = h.time_dim;
        pc.hidden = h.hidden;
        pc.beta_min = h.beta_min;
        pc.beta_max = h.beta_max;
        pc.token_scale = h.token_scale;
        AddAgent a;
        a.policy = DiffusionPolicy(pc, rng);
        a.critics = TwinCritics(pc.state_dim, users, h.hidden, rng);
        return a;
    }
};

struct TrainResult {
    std::vector<double> rewards;  // utility of the executed action per episode
    std::size_t gradient_steps = 0;
    double last_critic_loss = 0.0;
    double last_policy_loss = 0.0;
};

class AddTrainer {
public:
    AddTrainer(AddAgent& agent, const AddHyper& hyper)
        : agent_(agent),
          hyper_(hyper),
          buffer_(hyper.buffer_capacity),
          rng_(hyper.seed, 0x7A1),
          policy_opt_(agent.policy.eps_net(), {hyper.lr, 0.9, 0.999, 1e-8, hyper.grad_clip}),
          q1_opt_(agent.critics.q(1), {hyper.lr, 0.9, 0.999, 1e-8, hyper.grad_clip}),
          q2_opt_(agent.critics.q(2), {hyper.lr, 0.9, 0.999, 1e-8, hyper.grad_clip}) {
        hyper_.validate();
    }

    const ReplayBuffer<Transition>& buffer() const { return buffer_; }

    double explore_at(std::size_t episode) const {
        if (hyper_.episodes <= 1) return hyper_.explore_end;
        const double f = static_cast<double>(episode) / static_cast<double>(hyper_.episodes - 1);
        return hyper_.explore_start + (hyper_.explore_end - hyper_.explore_start) * f;
    }

    // Stores one record; runs updates once the buffer holds a full batch.
    void observe(Transition t) {
        buffer_.push(std::move(t));
        if (buffer_.size() < hyper_.batch_size) return;
        for (std::size_t k = 0; k < hyper_.updates_per_episode; ++k) update();
    }

    // One critic step followed by one policy step on a sampled batch.
    void update() {
        const auto idx = buffer_.sample_indices(hyper_.batch_size, rng_);
        const auto batch = static_cast<Eigen::Index>(idx.size());
        const auto& first = buffer_[idx[0]];
        Matrix states(first.features.size(), batch);
        Matrix fractions(first.fraction.size(), batch);
        std::vector<double> rewards(idx.size());
        for (Eigen::Index k = 0; k < batch; ++k) {
            const auto& r = buffer_[idx[static_cast<std::size_t>(k)]];
            states.col(k) = r.features;
            fractions.col(k) = r.fraction;
            rewards[static_cast<std::size_t>(k)] = r.reward;
        }

        auto& critics = agent_.critics;
        const auto targets = critics.targets(states, fractions, rewards, hyper_.gamma);
        auto g1 = critics.q(1).zero_grads();
        auto g2 = critics.q(2).zero_grads();
        result_.last_critic_loss = critic_loss(critics, states, fractions, targets, g1, g2);
        q1_opt_.step(critics.q(1), std::move(g1));
        q2_opt_.step(critics.q(2), std::move(g2));

        const auto n = static_cast<Eigen::Index>(agent_.policy.config().users);
        Matrix b_T(n, batch);
        for (Eigen::Index i = 0; i < b_T.size(); ++i) b_T.data()[i] = rng_.normal();
        std::vector<Matrix> noise(agent_.policy.config().steps, Matrix(n, batch));
        for (auto& z : noise) {
            for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng_.normal();
        }
        auto gp = agent_.policy.eps_net().zero_grads();
        result_.last_policy_loss = policy_loss(agent_.policy, critics, states, b_T, noise, gp, hyper_.action_reg);
        policy_opt_.step(agent_.policy.eps_net(), std::move(gp));

        if (!std::isfinite(result_.last_critic_loss) || !std::isfinite(result_.last_policy_loss)) {
            throw Error("ADD training diverged: non-finite loss at gradient step " +
                        std::to_string(result_.gradient_steps));
        }
        ++result_.gradient_steps;
        if (result_.gradient_steps % hyper_.sync_period == 0) critics.sync_targets();
    }

    TrainResult run(const AllocationEnv& env) {
        if (env.users() != agent_.policy.config().users) throw Error("train: environment user count differs from the agent's");
        Rng env_rng(hyper_.seed, 0xE2F);
        for (std::size_t e = 0; e < hyper_.episodes; ++e) {
            const auto state = env.sample_state(env_rng);
            const Vector f = state_features(state, agent_.policy.config().token_scale);
            const auto action = agent_.policy.sample_action(f, state.cap, SampleMode::training, explore_at(e), rng_);
            const double u = env.utility(state, action.tokens);
            result_.rewards.push_back(u);
            observe({f, Eigen::Map<const Vector>(action.fraction.data(), static_cast<Eigen::Index>(action.fraction.size())),
                     hyper_.reward_scale * u});
        }
        return result_;
    }

    const TrainResult& result() const { return result_; }

private:
    AddAgent& agent_;
    AddHyper hyper_;
    ReplayBuffer<Transition> buffer_;
    Rng rng_;
    nn::Adam policy_opt_;
    nn::Adam q1_opt_;
    nn::Adam q2_opt_;
    TrainResult result_;
};

inline TrainResult train(AddAgent& agent, const AllocationEnv& env, const AddHyper& hyper) {
    AddTrainer trainer(agent, hyper);
    return trainer.run(env);
}

// Deterministic inference: b_T = 0, z = 0, no exploration.
inline AllocAction allocate(const AddAgent& agent, const AllocState& state) {
    Rng unused(0);
    return agent.policy.sample_action(state, SampleMode::inference, 0.0, unused);
}

// ---------------------------------------------------------------------------
// Baselines

enum class Baseline { fixed, random, greedy_table };

inline AllocAction baseline_allocate(Baseline kind, const AllocState& s, Rng& rng, const AllocationEnv* env = nullptr) {
    AllocAction a;
    for (std::size_t i = 0; i < s.users(); ++i) {
        const double cap = static_cast<double>(s.cap[i]);
        double tokens = 0.0;
        switch (kind) {
            case Baseline::fixed:
                tokens = cap;
                break;
            case Baseline::random:
                tokens = rng.uniform() * cap;
                break;
            case Baseline::greedy_table: {
                if (env == nullptr) throw ConfigError("greedy baseline needs a score-table environment");
                const auto bps = env->breakpoints(s, i);
                if (bps.empty()) throw ConfigError("greedy baseline needs a score-table environment");
                double best = -std::numeric_limits<double>::infinity();
                for (auto t : bps) {
                    if (t > s.cap[i]) continue;
                    const double u = env->user_utility(s, i, t);
                    if (u > best) {
                        best = u;
                        tokens = static_cast<double>(t);
                    }
                }
                break;
            }
        }
        a.tokens.push_back(tokens);
        a.fraction.push_back(cap > 0 ? tokens / cap : 0.0);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline void mlp_to_arrays(const nn::Mlp& net, const std::string& prefix, std::vector<NamedArray>& out) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
        const auto& w = net.weights()[l];
        NamedArray wa{prefix + ".W" + std::to_string(l),
                      {static_cast<std::uint64_t>(w.rows()), static_cast<std::uint64_t>(w.cols())},
                      {}};
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) wa.values.push_back(w(r, c));
        }
        out.push_back(std::move(wa));
        const auto& b = net.biases()[l];
        out.push_back({prefix + ".b" + std::to_string(l), {static_cast<std::uint64_t>(b.size())},
                       std::vector<double>(b.data(), b.data() + b.size())});
    }
}

inline void mlp_from_arrays(nn::Mlp& net, const std::vector<NamedArray>& arrays, const std::string& prefix) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
        auto& w = net.weights()[l];
        const auto& wa = find_array(arrays, prefix + ".W" + std::to_string(l));
        if (wa.shape.size() != 2 || wa.shape[0] != static_cast<std::uint64_t>(w.rows()) ||
            wa.shape[1] != static_cast<std::uint64_t>(w.cols())) {
            throw ConfigError("checkpoint: shape mismatch for " + wa.name);
        }
        std::size_t k = 0;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = wa.values[k++];
        }
        auto& b = net.biases()[l];
        const auto& ba = find_array(arrays, prefix + ".b" + std::to_string(l));
        if (ba.values.size() != static_cast<std::size_t>(b.size())) throw ConfigError("checkpoint: shape mismatch for " + ba.name);
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = ba.values[static_cast<std::size_t>(i)];
    }
}

}  // namespace detail

inline std::vector<NamedArray> DiffusionPolicy::to_arrays(const std::string& prefix) const {
    std::vector<NamedArray> out;
    detail::mlp_to_arrays(eps_, prefix + ".eps", out);
    return out;
}

inline void DiffusionPolicy::load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix) {
    detail::mlp_from_arrays(eps_, arrays, prefix + ".eps");
}

inline std::vector<NamedArray> TwinCritics::to_arrays(const std::string& prefix) const {
    std::vector<NamedArray> out;
    detail::mlp_to_arrays(q1_, prefix + ".q1", out);
    detail::mlp_to_arrays(q2_, prefix + ".q2", out);
    detail::mlp_to_arrays(t1_, prefix + ".q1_target", out);
    detail::mlp_to_arrays(t2_, prefix + ".q2_target", out);
    return out;
}

inline void TwinCritics::load_arrays(const std::vector<NamedArray>& arrays, const std::string& prefix) {
    detail::mlp_from_arrays(q1_, arrays, prefix + ".q1");
    detail::mlp_from_arrays(q2_, arrays, prefix + ".q2");
    detail::mlp_from_arrays(t1_, arrays, prefix + ".q1_target");
    detail::mlp_from_arrays(t2_, arrays, prefix + ".q2_target");
}

// The "config" array holds: users, T, time_dim, beta_min, beta_max,
// token_scale, hidden sizes...
inline void save_agent(const AddAgent& agent, const std::filesystem::path& path) {
    const auto& pc = agent.policy.config();
    NamedArray cfg{"config", {}, {static_cast<double>(pc.users), static_cast<double>(pc.steps),
                                  static_cast<double>(pc.time_dim), pc.beta_min, pc.beta_max, pc.token_scale}};
    for (auto h : pc.hidden) cfg.values.push_back(static_cast<double>(h));
    cfg.shape = {cfg.values.size()};
    std::vector<NamedArray> arrays{cfg};
    for (auto& a : agent.policy.to_arrays("policy")) arrays.push_back(std::move(a));
    for (auto& a : agent.critics.to_arrays("critics")) arrays.push_back(std::move(a));
    write_checkpoint(path, arrays);
}

inline AddAgent load_agent(const std::filesystem::path& path) {
    const auto arrays = read_checkpoint(path);
    const auto& cfg = find_array(arrays, "config");
    if (cfg.values.size() < 6) throw ConfigError("checkpoint: config array too short");
    AddHyper h;
    const auto users = static_cast<std::size_t>(cfg.values[0]);
    h.steps = static_cast<std::size_t>(cfg.values[1]);
    h.time_dim = static_cast<std::size_t>(cfg.values[2]);
    h.beta_min = cfg.values[3];
    h.beta_max = cfg.values[4];
    h.token_scale = cfg.values[5];
    h.hidden.clear();
    for (std::size_t i = 6; i < cfg.values.size(); ++i) h.hidden.push_back(static_cast<std::size_t>(cfg.values[i]));
    if (users == 0) throw ConfigError("checkpoint: zero users");
    auto agent = AddAgent::create(users, h);
    agent.policy.load_arrays(arrays, "policy");
    agent.critics.load_arrays(arrays, "critics");
    return agent;
}

}  // namespace semcom::add
