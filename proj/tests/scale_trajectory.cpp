// Test helper: scales the world of a trajectory file by a factor.
// usage: scale_trajectory IN OUT FACTOR

#include <cstdlib>
#include <iostream>
#include <sstream>

#include "fidmap/io.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::cerr << "usage: scale_trajectory IN OUT FACTOR\n";
    return 64;
  }
  auto traj = fidmap::read_file(argv[1], fidmap::read_trajectory);
  const double factor = std::strtod(argv[3], nullptr);
  for (auto& e : traj) e.pose.t *= factor;
  std::ostringstream out;
  fidmap::write_trajectory(out, traj);
  fidmap::write_text_file_atomic(argv[2], out.str());
  return 0;
}
