#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "diffstack/training.hpp"

namespace diffstack {

// Sweeps behind the recognition tables:
//   table1  D2, noise on vs off
//   table2  D2, noise + carry-forward on vs both off
//   table3  D2, sequential vs incremental training
//   table4  D2, every family, train and test accuracy
//   table5  D3, D6 and palindrome, every family, train and test accuracy
//   table6  long strings (n=120, n=160) for D2 and D3
//   table7  long strings (n=120, n=160) for D6 and palindrome
struct ReproOptions {
  std::uint64_t seed = 7;
  std::size_t trials = 10;
  std::size_t epochs = 30;
  double data_scale = 1.0;        // multiplies every split size
  std::vector<Family> families;   // empty: the table's own row set
  TrainConfig base;               // hyperparameters shared by every cell
  std::filesystem::path out_dir;  // empty: nothing written
};

struct CellStatus {
  std::string family;
  std::string grammar;
  std::string regime;
  std::size_t completed = 0;
  std::size_t failures = 0;
  std::vector<std::string> errors;
};

struct ReproResult {
  std::string table;
  std::vector<ResultRow> rows;
  std::vector<AblationTable> tables;
  std::vector<CellStatus> cells;

  std::size_t failures() const;
};

const std::vector<std::string>& repro_table_ids();
bool is_repro_table(std::string_view id);
// Row set used when ReproOptions::families is empty.
std::vector<Family> default_families(std::string_view table);

// Runs the sweep. With out_dir set, writes results.csv, tables.md, one CSV
// per table and per-trial reports under out_dir. Progress goes to log when
// non-null. Throws std::invalid_argument for an unknown table id.
ReproResult run_repro(std::string_view table, const ReproOptions& options, std::ostream* log = nullptr);

}  // namespace diffstack
