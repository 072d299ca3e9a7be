#include "posemb/linalg.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "posemb/parallel.hpp"

namespace posemb {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

// Row-block size: keeps the streamed operand in cache across a few output rows.
constexpr int kBlock = 8;

}  // namespace

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_l2_distance(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double l2_distance(const double* a, const double* b, int n) {
  return std::sqrt(squared_l2_distance(a, b, n));
}

void matmul_abt(const Mat& a, const Mat& b, Mat& c) {
  require(a.cols == b.cols, "matmul_abt: inner dimensions differ");
  c = Mat(a.rows, b.rows);
  const int k = a.cols;
  parallel_for(0, (a.rows + kBlock - 1) / kBlock, [&](std::int64_t blo, std::int64_t bhi) {
    for (std::int64_t blk = blo; blk < bhi; ++blk) {
      const int r0 = static_cast<int>(blk) * kBlock;
      const int r1 = std::min(a.rows, r0 + kBlock);
      for (int j = 0; j < b.rows; ++j) {
        const double* brow = b.row(j);
        for (int r = r0; r < r1; ++r) {
          c.at(r, j) = dot(a.row(r), brow, k);
        }
      }
    }
  });
}

void matmul_ab(const Mat& a, const Mat& b, Mat& c) {
  require(a.cols == b.rows, "matmul_ab: inner dimensions differ");
  c = Mat(a.rows, b.cols);
  const int n = b.cols;
  parallel_for(0, (a.rows + kBlock - 1) / kBlock, [&](std::int64_t blo, std::int64_t bhi) {
    for (std::int64_t blk = blo; blk < bhi; ++blk) {
      const int r0 = static_cast<int>(blk) * kBlock;
      const int r1 = std::min(a.rows, r0 + kBlock);
      for (int kk = 0; kk < a.cols; ++kk) {
        const double* brow = b.row(kk);
        for (int r = r0; r < r1; ++r) {
          const double coef = a.at(r, kk);
          if (coef == 0.0) continue;
          double* crow = c.row(r);
          for (int j = 0; j < n; ++j) crow[j] += coef * brow[j];
        }
      }
    }
  });
}

void matmul_atb(const Mat& a, const Mat& b, Mat& c) {
  require(a.rows == b.rows, "matmul_atb: inner dimensions differ");
  c = Mat(a.cols, b.cols);
  const int n = b.cols;
  parallel_for(0, (a.cols + kBlock - 1) / kBlock, [&](std::int64_t blo, std::int64_t bhi) {
    for (std::int64_t blk = blo; blk < bhi; ++blk) {
      const int r0 = static_cast<int>(blk) * kBlock;
      const int r1 = std::min(a.cols, r0 + kBlock);
      for (int kk = 0; kk < a.rows; ++kk) {
        const double* brow = b.row(kk);
        const double* arow = a.row(kk);
        for (int r = r0; r < r1; ++r) {
          const double coef = arow[r];
          if (coef == 0.0) continue;
          double* crow = c.row(r);
          for (int j = 0; j < n; ++j) crow[j] += coef * brow[j];
        }
      }
    }
  });
}

}  // namespace posemb
