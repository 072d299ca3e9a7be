#pragma once

#include <cstddef>
#include <vector>

namespace posemb {

// Dense row-major matrix of doubles.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), d(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  double* row(int r) { return d.data() + static_cast<std::size_t>(r) * cols; }
  const double* row(int r) const { return d.data() + static_cast<std::size_t>(r) * cols; }
  double& at(int r, int c) { return d[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return d[static_cast<std::size_t>(r) * cols + c]; }
  void zero() { std::fill(d.begin(), d.end(), 0.0); }
};

// c = a * b^T        a: m*k, b: n*k  ->  c: m*n
void matmul_abt(const Mat& a, const Mat& b, Mat& c);
// c = a * b          a: m*k, b: k*n  ->  c: m*n
void matmul_ab(const Mat& a, const Mat& b, Mat& c);
// c = a^T * b        a: k*m, b: k*n  ->  c: m*n
void matmul_atb(const Mat& a, const Mat& b, Mat& c);

double dot(const double* a, const double* b, int n);
double l2_distance(const double* a, const double* b, int n);
double squared_l2_distance(const double* a, const double* b, int n);

}  // namespace posemb
