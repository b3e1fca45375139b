#include "xpl/io/dataset.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "xpl/core/error.hpp"

namespace xpl::io {

namespace {

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t at) : bytes_(bytes), at_(at) {}
  double f64() {
    require(at_ + 8 <= bytes_.size(), ErrorCode::kParseError, "dataset file is truncated");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[at_ + i])) << (8 * i);
    at_ += 8;
    return std::bit_cast<double>(bits);
  }
  bool finished() const { return at_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t at_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const DatasetHeader& header,
                  const std::vector<vrp::Instance>& instances) {
  require(static_cast<std::size_t>(header.count) == instances.size(), ErrorCode::kInvalidArgument,
          "dataset header count does not match the instances");
  std::ostringstream head;
  head << "xpl-dataset 1\nproblem " << vrp::to_string(header.problem) << "\nn_customers " << header.n_customers
       << "\ncount " << header.count << "\ndistribution " << header.distribution << "\nseed " << header.seed
       << "\nend\n";
  std::string body;
  for (const vrp::Instance& in : instances) {
    require(in.problem == header.problem && in.n_customers == header.n_customers, ErrorCode::kInvalidArgument,
            "instance does not match the dataset header");
    for (const vrp::Point& p : in.coords) {
      put_f64(body, p.x);
      put_f64(body, p.y);
    }
    switch (in.problem) {
      case vrp::Problem::kTsp: break;
      case vrp::Problem::kOp:
        for (double v : in.prizes) put_f64(body, v);
        put_f64(body, in.max_length);
        break;
      case vrp::Problem::kPctsp:
        for (double v : in.prizes) put_f64(body, v);
        for (double v : in.penalties) put_f64(body, v);
        put_f64(body, in.min_prize);
        break;
      case vrp::Problem::kCvrp:
        for (double v : in.demands) put_f64(body, v);
        put_f64(body, in.capacity);
        break;
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot write " + path.string());
  const std::string all = head.str() + body;
  out.write(all.data(), static_cast<std::streamsize>(all.size()));
}

std::vector<vrp::Instance> load_dataset(const std::filesystem::path& path, DatasetHeader* header_out) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();
  const std::size_t end = bytes.find("\nend\n");
  require(bytes.rfind("xpl-dataset 1\n", 0) == 0 && end != std::string::npos, ErrorCode::kParseError,
          path.string() + " is not a dataset file");
  DatasetHeader h;
  std::istringstream in(bytes.substr(0, end + 1));
  std::string line;
  try {
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string key, value;
      ls >> key >> value;
      if (key == "problem") h.problem = vrp::parse_problem(value);
      else if (key == "n_customers") h.n_customers = std::stoi(value);
      else if (key == "count") h.count = std::stoi(value);
      else if (key == "distribution") h.distribution = value;
      else if (key == "seed") h.seed = std::stoull(value);
    }
  } catch (const std::exception& e) {
    fail(ErrorCode::kParseError, "bad dataset header: " + std::string(e.what()));
  }
  require(h.n_customers > 0 && h.count >= 0, ErrorCode::kParseError, "bad dataset header");
  Reader r(bytes, end + 5);
  std::vector<vrp::Instance> out;
  const std::size_t nodes = static_cast<std::size_t>(h.n_customers) + (vrp::has_depot(h.problem) ? 1 : 0);
  for (int k = 0; k < h.count; ++k) {
    vrp::Instance in;
    in.problem = h.problem;
    in.n_customers = h.n_customers;
    in.coords.resize(nodes);
    for (vrp::Point& p : in.coords) {
      p.x = r.f64();
      p.y = r.f64();
    }
    auto column = [&](std::vector<double>& v) {
      v.resize(nodes);
      for (double& x : v) x = r.f64();
    };
    switch (h.problem) {
      case vrp::Problem::kTsp: break;
      case vrp::Problem::kOp:
        column(in.prizes);
        in.max_length = r.f64();
        break;
      case vrp::Problem::kPctsp:
        column(in.prizes);
        column(in.penalties);
        in.min_prize = r.f64();
        break;
      case vrp::Problem::kCvrp:
        column(in.demands);
        in.capacity = r.f64();
        break;
    }
    try {
      vrp::validate(in);
    } catch (const Error& e) {
      fail(ErrorCode::kParseError, "invalid instance " + std::to_string(k) + ": " + e.what());
    }
    out.push_back(std::move(in));
  }
  require(r.finished(), ErrorCode::kParseError, "dataset file has trailing bytes");
  if (header_out != nullptr) *header_out = h;
  return out;
}

Config Config::parse(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorCode::kParseError,
            "config line " + std::to_string(number) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    require(!key.empty(), ErrorCode::kParseError, "config line " + std::to_string(number) + ": empty key");
    c.values_[key] = trim(line.substr(eq + 1));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    require(used == it->second.size(), ErrorCode::kParseError, "");
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kParseError, "config key '" + key + "' expects a number, got '" + it->second + "'");
  }
}

long long Config::get_int(const std::string& key, long long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    require(used == it->second.size(), ErrorCode::kParseError, "");
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kParseError, "config key '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace xpl::io
