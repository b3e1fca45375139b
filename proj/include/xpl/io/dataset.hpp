#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xpl/vrp/instance.hpp"

namespace xpl::io {

// Text header (problem, n, count, distribution, seed) ending with "end",
// followed by float64 little-endian records. Per instance: x and y of
// every node, then the prize, penalty and demand columns the problem
// uses, then the problem's scalar (capacity, max_length or min_prize).
struct DatasetHeader {
  vrp::Problem problem = vrp::Problem::kTsp;
  int n_customers = 0;
  int count = 0;
  std::string distribution = "uniform";
  std::uint64_t seed = 0;
};

void save_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                  const std::vector<vrp::Instance>& instances);
std::vector<vrp::Instance> load_dataset(const std::filesystem::path& path, DatasetHeader* header = nullptr);

// Plain "key = value" lines; '#' starts a comment.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace xpl::io
