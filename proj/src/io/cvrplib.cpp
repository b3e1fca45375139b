#include "xpl/io/cvrplib.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "xpl/core/error.hpp"
#include "xpl/vrp/generate.hpp"

namespace xpl::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string line_ref(int n) { return "line " + std::to_string(n); }

double parse_number(const std::string& tok, int line, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kParseError, line_ref(line) + ": expected " + what + ", got '" + tok + "'");
}

long long parse_integer(const std::string& tok, int line, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorCode::kParseError, line_ref(line) + ": " + what + " must be an integer, got '" + tok + "'");
}

}  // namespace

BenchmarkInstance parse_cvrplib(const std::string& text) {
  BenchmarkInstance b;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  enum class Section { kNone, kCoords, kDemands, kDepot } section = Section::kNone;
  bool has_dim = false, has_cap = false, has_coords = false, has_demands = false, has_depot = false;
  std::map<long long, vrp::Point> coords;
  std::map<long long, double> demands;
  std::vector<long long> depots;
  bool depot_closed = false;

  while (std::getline(in, raw)) {
    ++number;
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (line == "EOF") break;
    const auto colon = line.find(':');
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "NODE_COORD_SECTION") {
      section = Section::kCoords;
      has_coords = true;
      continue;
    }
    if (first == "DEMAND_SECTION") {
      section = Section::kDemands;
      has_demands = true;
      continue;
    }
    if (first == "DEPOT_SECTION") {
      section = Section::kDepot;
      has_depot = true;
      continue;
    }
    if (colon != std::string::npos && std::isalpha(static_cast<unsigned char>(line[0]))) {
      const std::string key = trim(line.substr(0, colon));
      const std::string value = trim(line.substr(colon + 1));
      section = Section::kNone;
      if (key == "NAME") b.name = value;
      else if (key == "COMMENT") b.comment = value;
      else if (key == "EDGE_WEIGHT_TYPE") b.edge_weight_type = value;
      else if (key == "DIMENSION") {
        b.dimension = static_cast<int>(parse_integer(value, number, "DIMENSION"));
        has_dim = true;
      } else if (key == "CAPACITY") {
        b.capacity = parse_number(value, number, "CAPACITY");
        has_cap = true;
      }
      continue;
    }
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    tok.insert(tok.begin(), first);
    switch (section) {
      case Section::kCoords: {
        require(tok.size() == 3, ErrorCode::kParseError, line_ref(number) + ": coordinate lines need id x y");
        const long long id = parse_integer(tok[0], number, "node id");
        coords[id] = {parse_number(tok[1], number, "coordinate"), parse_number(tok[2], number, "coordinate")};
        break;
      }
      case Section::kDemands: {
        require(tok.size() == 2, ErrorCode::kParseError, line_ref(number) + ": demand lines need id demand");
        const long long id = parse_integer(tok[0], number, "node id");
        demands[id] = static_cast<double>(parse_integer(tok[1], number, "demand"));
        break;
      }
      case Section::kDepot:
        for (const std::string& t : tok) {
          const long long id = parse_integer(t, number, "depot id");
          if (id == -1) depot_closed = true;
          else if (!depot_closed) depots.push_back(id);
        }
        break;
      case Section::kNone:
        fail(ErrorCode::kParseError, line_ref(number) + ": unexpected line '" + line + "'");
    }
  }

  require(has_dim, ErrorCode::kParseError, "missing DIMENSION");
  require(has_cap, ErrorCode::kParseError, "missing CAPACITY");
  require(has_coords, ErrorCode::kParseError, "missing NODE_COORD_SECTION");
  require(has_demands, ErrorCode::kParseError, "missing DEMAND_SECTION");
  require(has_depot, ErrorCode::kParseError, "missing DEPOT_SECTION");
  require(b.dimension >= 2, ErrorCode::kParseError, "DIMENSION must be at least 2");
  require(b.capacity > 0.0, ErrorCode::kParseError, "CAPACITY must be positive");
  require(depots.size() == 1, ErrorCode::kParseError, "DEPOT_SECTION must list exactly one depot");
  const auto dim = static_cast<long long>(b.dimension);
  require(coords.size() == static_cast<std::size_t>(dim), ErrorCode::kParseError,
          "NODE_COORD_SECTION does not list DIMENSION nodes");
  require(demands.size() == static_cast<std::size_t>(dim), ErrorCode::kParseError,
          "DEMAND_SECTION does not list DIMENSION nodes");
  for (long long id = 1; id <= dim; ++id) {
    require(coords.count(id) && demands.count(id), ErrorCode::kParseError,
            "node ids must run from 1 to DIMENSION (missing " + std::to_string(id) + ")");
    b.coords.push_back(coords[id]);
    b.demands.push_back(demands[id]);
  }
  require(depots[0] >= 1 && depots[0] <= dim, ErrorCode::kParseError, "DEPOT_SECTION id out of range");
  b.depot = static_cast<std::size_t>(depots[0] - 1);
  require(b.demands[b.depot] == 0.0, ErrorCode::kParseError, "depot demand must be zero");
  for (double d : b.demands) {
    require(d >= 0.0 && d <= b.capacity, ErrorCode::kParseError, "demand outside [0, CAPACITY]");
  }
  std::vector<vrp::Point> copy = b.coords;
  b.scale = vrp::normalize_unit_square(copy);
  return b;
}

std::optional<double> parse_solution_cost(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    double v = 0;
    if (ls >> key && (key == "Cost" || key == "cost" || key == "COST") && ls >> v) return v;
  }
  return std::nullopt;
}

BenchmarkInstance load_cvrplib(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  BenchmarkInstance b;
  try {
    b = parse_cvrplib(ss.str());
  } catch (const Error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
  std::filesystem::path sol = path;
  sol.replace_extension(".sol");
  if (std::filesystem::exists(sol)) {
    std::ifstream s(sol);
    std::ostringstream st;
    st << s.rdbuf();
    b.best_known = parse_solution_cost(st.str());
  }
  return b;
}

std::string serialize_cvrplib(const BenchmarkInstance& b) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "NAME : " << b.name << "\n";
  if (!b.comment.empty()) out << "COMMENT : " << b.comment << "\n";
  out << "TYPE : CVRP\n";
  out << "DIMENSION : " << b.dimension << "\n";
  out << "EDGE_WEIGHT_TYPE : " << b.edge_weight_type << "\n";
  out << "CAPACITY : " << b.capacity << "\n";
  out << "NODE_COORD_SECTION\n";
  for (std::size_t i = 0; i < b.coords.size(); ++i) out << i + 1 << " " << b.coords[i].x << " " << b.coords[i].y << "\n";
  out << "DEMAND_SECTION\n";
  for (std::size_t i = 0; i < b.demands.size(); ++i) out << i + 1 << " " << b.demands[i] << "\n";
  out << "DEPOT_SECTION\n" << b.depot + 1 << "\n-1\nEOF\n";
  return out.str();
}

NormalizedInstance to_instance(const BenchmarkInstance& b) {
  NormalizedInstance out;
  out.original_index.push_back(b.depot);
  for (std::size_t i = 0; i < b.coords.size(); ++i) {
    if (i != b.depot) out.original_index.push_back(i);
  }
  vrp::Instance& in = out.instance;
  in.problem = vrp::Problem::kCvrp;
  in.n_customers = b.dimension - 1;
  in.capacity = b.capacity;
  for (std::size_t i : out.original_index) {
    in.coords.push_back(b.coords[i]);
    in.demands.push_back(b.demands[i]);
  }
  vrp::normalize_unit_square(in.coords);
  vrp::validate(in);
  return out;
}

double original_cost(const BenchmarkInstance& b, const NormalizedInstance& norm, std::span<const std::size_t> tour,
                     bool round_edges) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < tour.size(); ++i) {
    require(tour[i] < norm.original_index.size() && tour[i + 1] < norm.original_index.size(),
            ErrorCode::kInvalidArgument, "tour index out of range");
    const double d = vrp::distance(b.coords[norm.original_index[tour[i]]], b.coords[norm.original_index[tour[i + 1]]]);
    total += round_edges ? std::floor(d + 0.5) : d;
  }
  return total;
}

}  // namespace xpl::io
