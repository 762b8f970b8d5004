#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "diffstack/cells.hpp"

namespace diffstack {

// Text checkpoint:
//
//   #diffstack-checkpoint 1
//   family=diffstk-rnn
//   d=5
//   m=8
//   k=3
//   seed=7
//   steps=1234
//   <other key=value lines>
//   matrix U 8 5
//   <one row per line, shortest round-trip decimal>
//   ...
//   end
//
// "state <name> rows cols" blocks carry optional training state (optimizer
// moments) in the same layout.
struct Checkpoint {
  Model model;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  std::map<std::string, std::string> info;  // grammar, options, schedule state
  std::vector<NamedMatrix> state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ck);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Exact decimal text for a real, and its inverse.
std::string format_real(real x);
real parse_real(std::string_view s);

}  // namespace diffstack
