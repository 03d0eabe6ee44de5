#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace fedda {

/// Row-major 2-D grid of cells.
template <typename T>
struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> cells;

  Grid() = default;
  Grid(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), cells(r * c, fill) {}

  T& at(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
  const T& at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  std::size_t size() const { return cells.size(); }
  bool same_shape(const Grid& other) const { return rows == other.rows && cols == other.cols; }

  bool operator==(const Grid&) const = default;
};

using IntGrid = Grid<int>;
using BoolGrid = Grid<std::uint8_t>;

}  // namespace fedda
