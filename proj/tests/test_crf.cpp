#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lexforge/crf.hpp"
#include "lexforge/rng.hpp"

using namespace lexforge;

namespace {

// Exhaustive enumeration over all K^n paths: the independent oracle for both
// the log partition and the decoder.
struct BruteForce {
    double log_z;
    std::vector<int> best_path;
    double best_score;

    static BruteForce run(const Mat<double>& emissions, const CrfParams<double>& crf) {
        const int n = static_cast<int>(emissions.rows());
        const int k = static_cast<int>(emissions.cols());
        BruteForce result;
        result.best_score = -std::numeric_limits<double>::infinity();
        std::vector<double> scores;
        std::vector<int> path(static_cast<std::size_t>(n), 0);
        while (true) {
            const double score = crf_path_score(emissions, path, crf);
            scores.push_back(score);
            if (score > result.best_score) {  // lexicographic order: first tie wins
                result.best_score = score;
                result.best_path = path;
            }
            int pos = n - 1;
            while (pos >= 0 && path[static_cast<std::size_t>(pos)] == k - 1) {
                path[static_cast<std::size_t>(pos)] = 0;
                --pos;
            }
            if (pos < 0) break;
            ++path[static_cast<std::size_t>(pos)];
        }
        double peak = -std::numeric_limits<double>::infinity();
        for (double s : scores) peak = std::max(peak, s);
        double sum = 0;
        for (double s : scores) sum += std::exp(s - peak);
        result.log_z = peak + std::log(sum);
        return result;
    }
};

Mat<double> random_emissions(int n, int k, std::uint64_t seed) {
    RngStream rng(seed);
    Mat<double> e(n, k);
    for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.next_gaussian();
    return e;
}

CrfParams<double> random_crf(int k, std::uint64_t seed) {
    RngStream rng(seed);
    auto crf = CrfParams<double>::zeros(k);
    for (Eigen::Index i = 0; i < crf.trans.size(); ++i) crf.trans.data()[i] = rng.next_gaussian();
    for (Eigen::Index i = 0; i < k; ++i) {
        crf.start[i] = rng.next_gaussian();
        crf.end[i] = rng.next_gaussian();
    }
    return crf;
}

}  // namespace

TEST_CASE("single-segment loss is logsumexp minus the gold emission", "[crf]") {
    Mat<double> emissions(1, 2);
    emissions << 1.3, -0.4;
    auto crf = CrfParams<double>::zeros(2);
    auto result = crf_nll(emissions, {0}, crf);
    const double expected = std::log(std::exp(1.3) + std::exp(-0.4)) - 1.3;
    REQUIRE(result.loss == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("zero transitions factorize into per-position cross entropies", "[crf]") {
    auto emissions = random_emissions(5, 3, 1);
    auto crf = CrfParams<double>::zeros(3);
    std::vector<int> gold{0, 2, 1, 1, 0};
    auto result = crf_nll(emissions, gold, crf);
    double expected = 0;
    for (int t = 0; t < 5; ++t) {
        Vec<double> row = emissions.row(t).transpose();
        expected += log_sum_exp(row) - emissions(t, gold[static_cast<std::size_t>(t)]);
    }
    REQUIRE(result.loss == Catch::Approx(expected).margin(1e-10));
}

TEST_CASE("log partition matches 27-path enumeration on a 3x3 instance", "[crf]") {
    auto emissions = random_emissions(3, 3, 2);
    auto crf = random_crf(3, 3);
    auto oracle = BruteForce::run(emissions, crf);
    REQUIRE(crf_log_partition(emissions, crf) == Catch::Approx(oracle.log_z).margin(1e-8));
}

TEST_CASE("zero transitions decode to the per-position argmax", "[crf]") {
    auto emissions = random_emissions(6, 4, 4);
    auto crf = CrfParams<double>::zeros(4);
    auto path = crf_decode(emissions, crf);
    for (int t = 0; t < 6; ++t) {
        Eigen::Index argmax = 0;
        emissions.row(t).maxCoeff(&argmax);
        REQUIRE(path[static_cast<std::size_t>(t)] == static_cast<int>(argmax));
    }
}

TEST_CASE("viterbi equals exhaustive argmax on 100 random instances", "[crf]") {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        RngStream rng(trial + 10);
        const int n = 1 + static_cast<int>(rng.next_below(6));
        const int k = 2 + static_cast<int>(rng.next_below(3));
        auto emissions = random_emissions(n, k, trial * 7 + 1);
        auto crf = random_crf(k, trial * 13 + 5);
        auto oracle = BruteForce::run(emissions, crf);
        auto decoded = crf_decode(emissions, crf);
        REQUIRE(decoded == oracle.best_path);
        REQUIRE(crf_log_partition(emissions, crf) == Catch::Approx(oracle.log_z).margin(1e-8));
        // decoded path never scores below any gold labelling
        std::vector<int> gold(static_cast<std::size_t>(n));
        for (auto& g : gold) g = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(k)));
        REQUIRE(crf_path_score(emissions, decoded, crf) >=
                crf_path_score(emissions, gold, crf) - 1e-12);
    }
}

TEST_CASE("ties break toward the lower label id", "[crf]") {
    Mat<double> emissions = Mat<double>::Zero(4, 3);
    auto crf = CrfParams<double>::zeros(3);
    auto path = crf_decode(emissions, crf);
    REQUIRE(path == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("length-one sequences decode to argmax of start+emission+end", "[crf]") {
    Mat<double> emissions(1, 3);
    emissions << 0.5, 0.9, 0.1;
    auto crf = CrfParams<double>::zeros(3);
    crf.start << 1.0, 0.0, 0.0;
    crf.end << 0.0, 0.0, 1.5;
    // totals: 1.5, 0.9, 1.6
    auto path = crf_decode(emissions, crf);
    REQUIRE(path == std::vector<int>{2});
}

TEST_CASE("path probabilities normalize to one", "[crf]") {
    auto emissions = random_emissions(4, 3, 6);
    auto crf = random_crf(3, 7);
    const double log_z = crf_log_partition(emissions, crf);
    double total = 0;
    std::vector<int> path(4, 0);
    while (true) {
        total += std::exp(crf_path_score(emissions, path, crf) - log_z);
        int pos = 3;
        while (pos >= 0 && path[static_cast<std::size_t>(pos)] == 2) {
            path[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
        ++path[static_cast<std::size_t>(pos)];
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("gold length mismatch is an error", "[crf]") {
    auto emissions = random_emissions(3, 2, 8);
    auto crf = CrfParams<double>::zeros(2);
    REQUIRE_THROWS_AS(crf_nll(emissions, {0, 1}, crf), Error);
}

TEST_CASE("crf gradients match finite differences", "[crf][grad]") {
    auto emissions = random_emissions(5, 3, 9);
    auto crf = random_crf(3, 10);
    std::vector<int> gold{2, 0, 1, 2, 2};
    auto analytic = crf_nll(emissions, gold, crf);

    const double eps = 1e-6;
    auto check_slot = [&](double* slot, double got) {
        const double saved = *slot;
        *slot = saved + eps;
        const double plus = crf_nll(emissions, gold, crf).loss;
        *slot = saved - eps;
        const double minus = crf_nll(emissions, gold, crf).loss;
        *slot = saved;
        const double fd = (plus - minus) / (2.0 * eps);
        REQUIRE(got == Catch::Approx(fd).margin(1e-6));
    };
    for (Eigen::Index i = 0; i < emissions.size(); ++i) {
        check_slot(&emissions.data()[i], analytic.d_emissions.data()[i]);
    }
    for (Eigen::Index i = 0; i < crf.trans.size(); ++i) {
        check_slot(&crf.trans.data()[i], analytic.d_trans.data()[i]);
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
        check_slot(&crf.start[i], analytic.d_start[i]);
        check_slot(&crf.end[i], analytic.d_end[i]);
    }
}
