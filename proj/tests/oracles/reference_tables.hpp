#pragma once

// Readers for the high-precision tables under tests/data (generated by
// gen_reference_tables.py with mpmath at 50 significant digits).

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

struct SurvivalRow {
  std::string dist;
  double p1, p2, x, sf;
};

struct IrwinHallRow {
  int n;
  double x, cdf;
};

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

inline std::vector<SurvivalRow> survival_table(const std::string& dir) {
  std::vector<SurvivalRow> out;
  for (const auto& c : read_csv(dir + "/survival_reference.csv"))
    out.push_back({c.at(0), std::stod(c.at(1)), std::stod(c.at(2)), std::stod(c.at(3)), std::stod(c.at(4))});
  return out;
}

inline std::vector<IrwinHallRow> irwin_hall_table(const std::string& dir) {
  std::vector<IrwinHallRow> out;
  for (const auto& c : read_csv(dir + "/irwin_hall_reference.csv"))
    out.push_back({std::stoi(c.at(0)), std::stod(c.at(1)), std::stod(c.at(2))});
  return out;
}

}  // namespace oracle
