#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace apr::bench {

struct CsrMatrix {
  std::int64_t n_rows = 0;
  std::int64_t n_cols = 0;
  std::vector<std::int64_t> row_ptr; // n_rows + 1, monotone, row_ptr[0] == 0
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;

  std::int64_t nnz() const { return row_ptr.empty() ? 0 : row_ptr.back(); }
  std::int64_t row_nnz(std::int64_t row) const {
    return row_ptr[static_cast<std::size_t>(row + 1)] -
           row_ptr[static_cast<std::size_t>(row)];
  }
  void validate() const;
};

/// Square band matrix: nonzeros within `half_bandwidth` of the diagonal,
/// seeded values. Substitutes for the large application matrices at desk
/// scale; parameters are recorded in benchmark output for reproducibility.
CsrMatrix make_banded(std::int64_t n, std::int64_t half_bandwidth,
                      std::uint64_t seed);

/// Square matrix with ~`nnz_per_row` random off-diagonals per row plus a
/// guaranteed diagonal entry.
CsrMatrix make_random(std::int64_t n, std::int64_t nnz_per_row, std::uint64_t seed);

/// Matrix Market coordinate format (real/integer/pattern, general or
/// symmetric).
CsrMatrix read_matrix_market(std::istream& in);
CsrMatrix read_matrix_market_file(const std::string& path);

/// y += A * x
void spmv_serial(const CsrMatrix& m, std::span<const double> x, std::span<double> y);

/// Contiguous row blocks: block k is [cuts[k], cuts[k+1]).
struct RowPartition {
  std::vector<std::int64_t> cuts;

  int parts() const { return static_cast<int>(cuts.size()) - 1; }
  std::int64_t begin(int part) const { return cuts[static_cast<std::size_t>(part)]; }
  std::int64_t end(int part) const { return cuts[static_cast<std::size_t>(part) + 1]; }
  int owner_of(std::int64_t row) const;
};

/// Greedy prefix cuts balancing nonzeros: each cut lands on the row boundary
/// whose cumulative nonzero count is closest to the ideal share, which keeps
/// every block within one max-row of the ideal. Deterministic.
RowPartition partition_rows_by_nnz(const CsrMatrix& m, int parts);

/// One rank's row block split for overlapped multiplication. The local block
/// keeps columns this rank owns (shifted to a local index space); everything
/// else goes to the non-local block, whose columns index the receive buffer.
struct PhaseSplit {
  CsrMatrix local;
  CsrMatrix nonlocal;
  std::vector<std::int32_t> remote_cols; // global ids, sorted ascending
};

/// Extracts rows [row_begin, row_end) of `m` as a standalone block with
/// untouched (global) column indices.
CsrMatrix take_rows(const CsrMatrix& m, std::int64_t row_begin, std::int64_t row_end);

PhaseSplit spmv_phase_split(const CsrMatrix& block, std::int64_t owned_col_begin,
                            std::int64_t owned_col_end);

} // namespace apr::bench
