#ifndef FETALSEG_EMBED_HPP
#define FETALSEG_EMBED_HPP

#include <string>
#include <utility>
#include <vector>

#include "fetalseg/data.hpp"

// 2D embedding of image sets via a fuzzy k-NN graph and a negative-sampled
// force-directed layout; used to visualize device-induced image variance.

namespace fetalseg {

struct EmbeddingConfig {
    int n_neighbors = 15;
    double min_dist = 0.1;
    int epochs = 200;
    int negative_sample_rate = 5;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_neighbors < 2) throw std::invalid_argument("embedding config: n_neighbors must be >= 2");
        if (min_dist <= 0.0 || min_dist >= 1.0) throw std::invalid_argument("embedding config: min_dist must be in (0,1)");
        if (epochs < 1 || negative_sample_rate < 1) throw std::invalid_argument("embedding config: bad epochs/rate");
    }
};

// Raw pixels of the image downsampled to 40x72, flattened.
std::vector<float> embedding_features(const ImageF& image);

// Exact k-NN with per-point adaptive bandwidth: rho is the nearest distance
// and sigma solves sum_j exp(-max(0, d_j - rho)/sigma) = log2(k) by 64
// bisection steps; edge weight = exp(-max(0, d - rho)/sigma).
struct KnnGraph {
    int k = 0;
    std::vector<std::vector<int>> neighbors;
    std::vector<std::vector<double>> distances;
    std::vector<std::vector<double>> weights;
    std::vector<double> rho, sigma;

    int size() const { return static_cast<int>(neighbors.size()); }
};

KnnGraph knn_graph(const std::vector<std::vector<float>>& features, int k);

// Probabilistic t-conorm symmetrization: w = w_ij + w_ji - w_ij * w_ji.
struct SymEdge {
    int i = 0, j = 0;  // i < j
    double w = 0.0;
};

struct FuzzyGraph {
    int n = 0;
    std::vector<SymEdge> edges;  // sorted by (i, j)
};

FuzzyGraph fuzzy_union(const KnnGraph& graph);

// Least-squares fit of 1/(1 + a d^(2b)) to the min_dist target curve.
std::pair<double, double> fit_curve_ab(double min_dist);

struct Point2D {
    double x = 0.0, y = 0.0;
};

// Spectral initialization (seeded-random fallback), then per-edge attractive
// and negative-sampled repulsive updates with learning rate decaying 1 -> 0.
std::vector<Point2D> layout_2d(const FuzzyGraph& graph, const EmbeddingConfig& config);

struct EmbeddingPoint {
    double x = 0.0, y = 0.0;
    std::string device;
    Plane plane = Plane::TV;
    std::string sample_id;
};

struct ClusterReport {
    double silhouette = 0.0;
    double knn_purity = 0.0;  // fraction of 10 nearest embedded neighbours sharing the label
    std::vector<std::string> excluded_labels;
};

ClusterReport cluster_metrics(const std::vector<Point2D>& points, const std::vector<std::string>& labels);

// Rank-based neighbourhood preservation in [0,1].
double trustworthiness(const std::vector<std::vector<float>>& features, const std::vector<Point2D>& coords, int k);

// SVG scatter (one panel per plane, one color per device) plus a CSV of points.
void export_plot(const std::vector<EmbeddingPoint>& points, const std::string& svg_path, const std::string& csv_path);

}  // namespace fetalseg

#endif
