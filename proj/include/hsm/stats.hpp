#pragma once

#include <span>
#include <vector>

namespace hsm {

// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs);

double pearson(std::span<const double> xs, std::span<const double> ys);

// Pearson correlation of average ranks. Throws ParameterError for fewer than
// two points or mismatched lengths; NaN when either side is constant.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

// Least-squares fit of y = slope * x + intercept.
LineFit least_squares(std::span<const double> xs, std::span<const double> ys);

// Slope of log(y) against log(x); all values must be positive.
double loglog_slope(std::span<const double> xs, std::span<const double> ys);

double median(std::vector<double> xs);

}  // namespace hsm
