#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "prop/dataset.hpp"
#include "prop/errors.hpp"
#include "prop/network.hpp"
#include "prop/rng.hpp"

namespace prop {

// Monte Carlo estimate of the model's output distribution under perturbed
// forward passes: P(k) is the fraction of runs whose argmax class was k.
struct OutputDistribution {
    std::vector<double> probs;         // counts / runs
    std::vector<std::int64_t> counts;  // argmax tallies, sum == runs
    int runs = 0;
    std::string input_mode;            // "noise" or "dataset"
    NoiseConfig noise;
    std::vector<double> mean_softmax;  // mean per-run softmax (research toggle)
};

inline int detector_thread_cap() {
    if (const char* env = std::getenv("PROP_AUDIT_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs T perturbed forward passes. Run t draws the input (a fresh uniform
// [0,1] image, or the t-th cycled dataset sample when input_samples is set)
// and all of its noise from a stream seeded with derive_seed(master_seed, t),
// so the result does not depend on thread scheduling.
inline OutputDistribution estimate_distribution(const Network& net, const NoiseConfig& noise,
                                                int runs, const Dataset* input_samples,
                                                std::uint64_t master_seed) {
    if (runs < 1) throw UsageError("estimate_distribution: runs must be >= 1");
    if (noise.variance <= 0.0)
        throw ConfigError("ProP requires perturbation: noise variance must be > 0");
    resolve_noise_targets(net, noise);
    if (input_samples) {
        if (input_samples->images.empty())
            throw UsageError("estimate_distribution: input dataset is empty");
        if (input_samples->images[0].shape != net.input_shape)
            throw DimensionError("input dataset images " +
                                 shape_str(input_samples->images[0].shape) +
                                 " do not match network input " + shape_str(net.input_shape));
    }

    const int k = net.num_classes;
    const std::size_t input_numel = static_cast<std::size_t>(numel_of(net.input_shape));

    auto run_range = [&](int t_begin, int t_end, std::vector<std::int64_t>& counts,
                         std::vector<double>& softmax_sum) {
        counts.assign(static_cast<std::size_t>(k), 0);
        softmax_sum.assign(static_cast<std::size_t>(k), 0.0);
        Tensor<float> x(net.input_shape);
        for (int t = t_begin; t < t_end; ++t) {
            Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(t)));
            if (input_samples) {
                x = input_samples->images[static_cast<std::size_t>(t) %
                                          input_samples->images.size()];
            } else {
                for (std::size_t i = 0; i < input_numel; ++i)
                    x.data[i] = static_cast<float>(rng.uniform());
            }
            const Tensor<double> probs = forward_perturbed(net, x, noise, rng);
            ++counts[static_cast<std::size_t>(argmax(probs))];
            for (int c = 0; c < k; ++c)
                softmax_sum[static_cast<std::size_t>(c)] += probs.data[static_cast<std::size_t>(c)];
        }
    };

    const int threads = std::min(detector_thread_cap(), runs);
    std::vector<std::vector<std::int64_t>> counts(static_cast<std::size_t>(threads));
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(threads));
    if (threads == 1) {
        run_range(0, runs, counts[0], sums[0]);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (runs + threads - 1) / threads;
        for (int i = 0; i < threads; ++i) {
            const int begin = i * chunk;
            const int end = std::min(begin + chunk, runs);
            pool.emplace_back(run_range, begin, end, std::ref(counts[static_cast<std::size_t>(i)]),
                              std::ref(sums[static_cast<std::size_t>(i)]));
        }
        for (auto& th : pool) th.join();
    }

    OutputDistribution dist;
    dist.runs = runs;
    dist.noise = noise;
    dist.input_mode = input_samples ? "dataset" : "noise";
    dist.counts.assign(static_cast<std::size_t>(k), 0);
    dist.mean_softmax.assign(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < threads; ++i)
        for (int c = 0; c < k; ++c) {
            dist.counts[static_cast<std::size_t>(c)] +=
                counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            dist.mean_softmax[static_cast<std::size_t>(c)] +=
                sums[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        }
    dist.probs.resize(static_cast<std::size_t>(k));
    for (int c = 0; c < k; ++c) {
        dist.probs[static_cast<std::size_t>(c)] =
            static_cast<double>(dist.counts[static_cast<std::size_t>(c)]) /
            static_cast<double>(runs);
        dist.mean_softmax[static_cast<std::size_t>(c)] /= static_cast<double>(runs);
    }
    return dist;
}

// ---------------------------------------------------------------------------
// Benign score: beta = (1 - p_max) * (s_rest / s_all)
// ---------------------------------------------------------------------------

struct ScoreParts {
    double benign_score = 0.0;
    double p_max = 0.0;
    double s_all = 0.0;
    double s_rest = 0.0;
};

// s_all: population standard deviation over all K entries (divide by K).
// s_rest: population standard deviation over the K-1 entries that remain
// after removing one maximal entry (lowest index when tied; divide by K-1).
// A distribution with s_all ~ 0 is uniform and scores 1; the result is
// clamped to [0,1] since s_rest can slightly exceed s_all near uniformity.
inline ScoreParts benign_score_parts(const std::vector<double>& probs) {
    const std::size_t k = probs.size();
    if (k < 2) throw UsageError("benign_score needs at least 2 classes");

    std::size_t max_idx = 0;
    for (std::size_t i = 1; i < k; ++i)
        if (probs[i] > probs[max_idx]) max_idx = i;

    ScoreParts parts;
    parts.p_max = probs[max_idx];

    double mean_all = 0.0;
    for (double p : probs) mean_all += p;
    mean_all /= static_cast<double>(k);
    double var_all = 0.0;
    for (double p : probs) var_all += (p - mean_all) * (p - mean_all);
    parts.s_all = std::sqrt(var_all / static_cast<double>(k));

    double mean_rest = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        if (i != max_idx) mean_rest += probs[i];
    mean_rest /= static_cast<double>(k - 1);
    double var_rest = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        if (i != max_idx) var_rest += (probs[i] - mean_rest) * (probs[i] - mean_rest);
    parts.s_rest = std::sqrt(var_rest / static_cast<double>(k - 1));

    if (parts.s_all < 1e-12) {
        parts.benign_score = 1.0;  // uniform distribution
        return parts;
    }
    parts.benign_score =
        std::clamp((1.0 - parts.p_max) * (parts.s_rest / parts.s_all), 0.0, 1.0);
    return parts;
}

inline double benign_score(const std::vector<double>& probs) {
    return benign_score_parts(probs).benign_score;
}

inline double benign_score(const OutputDistribution& dist) { return benign_score(dist.probs); }

// Total variation distance: half the L1 distance.
inline double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size())
        throw DimensionError("tv_distance: length mismatch " + std::to_string(p.size()) + " vs " +
                             std::to_string(q.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

struct DetectorSettings {
    double sigma2 = 10000.0;
    int runs = 1000;
    double threshold = 0.15;
    std::uint64_t seed = 0;
    const Dataset* input_samples = nullptr;  // null: uniform random inputs
    bool score_mean_softmax = false;         // score mean softmax instead of P(k)
};

struct DetectionReport {
    double benign_score = 0.0;
    double p_max = 0.0;
    double s_all = 0.0;
    double s_rest = 0.0;
    int suspected_target = 0;
    bool backdoored = false;
    double threshold = 0.0;
    double sigma2 = 0.0;
    int runs = 0;
    std::uint64_t seed = 0;
    std::string input_source;
    std::string score_basis;  // "frequency" or "mean_softmax"
    OutputDistribution distribution;
    std::map<std::string, std::string> model_metadata;
    std::string model_sha256;

    std::string verdict() const { return backdoored ? "backdoored" : "benign"; }
};

inline DetectionReport detect(const Network& net, const DetectorSettings& settings) {
    NoiseConfig noise;
    noise.variance = settings.sigma2;
    noise.seed = settings.seed;
    OutputDistribution dist =
        estimate_distribution(net, noise, settings.runs, settings.input_samples, settings.seed);

    DetectionReport report;
    const std::vector<double>& basis =
        settings.score_mean_softmax ? dist.mean_softmax : dist.probs;
    const ScoreParts parts = benign_score_parts(basis);
    report.benign_score = parts.benign_score;
    report.p_max = parts.p_max;
    report.s_all = parts.s_all;
    report.s_rest = parts.s_rest;
    // suspected target: argmax of P(k), lowest index on ties
    int target = 0;
    for (int c = 1; c < static_cast<int>(dist.probs.size()); ++c)
        if (dist.probs[static_cast<std::size_t>(c)] > dist.probs[static_cast<std::size_t>(target)])
            target = c;
    report.suspected_target = target;
    report.backdoored = report.benign_score < settings.threshold;
    report.threshold = settings.threshold;
    report.sigma2 = settings.sigma2;
    report.runs = settings.runs;
    report.seed = settings.seed;
    report.input_source = dist.input_mode;
    report.score_basis = settings.score_mean_softmax ? "mean_softmax" : "frequency";
    report.distribution = std::move(dist);
    report.model_metadata = net.metadata;
    return report;
}

// ---------------------------------------------------------------------------
// Convergence sweep over noise variances
// ---------------------------------------------------------------------------

struct SweepPoint {
    double sigma2 = 0.0;
    OutputDistribution dist;
    double tv_to_reference = 0.0;  // TV distance to the largest-variance point
    double benign_score = 0.0;
};

inline std::vector<SweepPoint> convergence_sweep(const Network& net,
                                                 const std::vector<double>& variances, int runs,
                                                 std::uint64_t seed,
                                                 const Dataset* input_samples = nullptr) {
    if (variances.empty()) throw UsageError("convergence_sweep: variance list is empty");
    for (std::size_t i = 0; i < variances.size(); ++i) {
        if (variances[i] <= 0.0)
            throw ConfigError("convergence_sweep: variances must be > 0, got " +
                              std::to_string(variances[i]));
        if (i > 0 && variances[i] <= variances[i - 1])
            throw UsageError("convergence_sweep: variances must be ascending");
    }
    std::vector<SweepPoint> points;
    for (std::size_t i = 0; i < variances.size(); ++i) {
        NoiseConfig noise;
        noise.variance = variances[i];
        SweepPoint pt;
        pt.sigma2 = variances[i];
        pt.dist = estimate_distribution(net, noise, runs, input_samples,
                                        derive_seed(seed, static_cast<std::uint64_t>(i)));
        pt.benign_score = benign_score(pt.dist);
        points.push_back(std::move(pt));
    }
    const std::vector<double>& ref = points.back().dist.probs;
    for (SweepPoint& pt : points) pt.tv_to_reference = tv_distance(pt.dist.probs, ref);
    return points;
}

}  // namespace prop
