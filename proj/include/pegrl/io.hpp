#pragma once

// CSV schemas. Doubles are written in shortest round-trip form so a file
// read back reproduces the in-memory values bit for bit.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pegrl/mdp.hpp"

namespace pegrl::csv {

inline std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw MalformedDataset("bad number '" + std::string(s) + "'");
  return v;
}

inline long parse_long(std::string_view s) {
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw MalformedDataset("bad integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  return os;
}

// Transition log --------------------------------------------------------------

inline const std::vector<std::string>& state_names() {
  static const std::vector<std::string> n{"e_x",  "e_y",  "e_w", "f_x", "f_y", "m_w", "df_x",
                                          "df_y", "dm_w", "dx",  "dy",  "dw",  "xi"};
  return n;
}

inline std::vector<std::string> transition_header() {
  std::vector<std::string> h{"episode", "t"};
  for (const auto& n : state_names()) h.push_back(n);
  for (const char* n : {"a_dx", "a_dy", "a_dw", "a_kx", "a_ky", "a_kw"}) h.push_back(n);
  for (const char* n : {"eps_x", "eps_y", "eps_w", "reward"}) h.push_back(n);
  for (const auto& n : state_names()) h.push_back("next_" + n);
  for (const char* n : {"terminal", "lppr_active"}) h.push_back(n);
  return h;
}

inline void write_transition_header(std::ostream& os) { os << join(transition_header()) << '\n'; }

inline void write_transition(std::ostream& os, const Transition& tr) {
  std::vector<std::string> c{std::to_string(tr.episode), std::to_string(tr.t)};
  for (int i = 0; i < kStateDim; ++i) c.push_back(num(tr.s[i]));
  for (int i = 0; i < kActionDim; ++i) c.push_back(num(tr.a[i]));
  c.push_back(num(tr.eps.x));
  c.push_back(num(tr.eps.y));
  c.push_back(num(tr.eps.w));
  c.push_back(num(tr.r));
  for (int i = 0; i < kStateDim; ++i) c.push_back(num(tr.s_next[i]));
  c.push_back(tr.terminal ? "1" : "0");
  c.push_back(tr.lppr_active ? "1" : "0");
  os << join(c) << '\n';
}

inline void write_transitions(const std::string& path, const std::vector<Transition>& rows) {
  auto os = open_out(path);
  write_transition_header(os);
  for (const auto& r : rows) write_transition(os, r);
}

inline std::vector<Transition> read_transitions(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw MalformedDataset("empty transition log");
  if (line != join(transition_header())) throw MalformedDataset("unexpected transition header");
  const std::size_t cols = transition_header().size();
  std::vector<Transition> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != cols)
      throw MalformedDataset("line " + std::to_string(lineno) + ": expected " +
                             std::to_string(cols) + " columns");
    Transition tr;
    std::size_t k = 0;
    tr.episode = static_cast<int>(parse_long(cells[k++]));
    tr.t = static_cast<int>(parse_long(cells[k++]));
    for (int i = 0; i < kStateDim; ++i) tr.s[i] = parse_double(cells[k++]);
    for (int i = 0; i < kActionDim; ++i) tr.a[i] = parse_double(cells[k++]);
    tr.eps.x = parse_double(cells[k++]);
    tr.eps.y = parse_double(cells[k++]);
    tr.eps.w = parse_double(cells[k++]);
    tr.r = parse_double(cells[k++]);
    for (int i = 0; i < kStateDim; ++i) tr.s_next[i] = parse_double(cells[k++]);
    tr.terminal = parse_long(cells[k++]) != 0;
    tr.lppr_active = parse_long(cells[k++]) != 0;
    rows.push_back(tr);
  }
  return rows;
}

inline std::vector<Transition> read_transitions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_transitions(is);
}

// Metrics ---------------------------------------------------------------------

struct EpisodeMetrics {
  int episode = 0;
  double total_reward = 0.0;
  int length = 0;
  bool success = false;
  int overloads = 0;
  int lppr_activations = 0;
  int mpc_steps = 0;
  bool aborted = false;
};

inline const char* metrics_header() {
  return "episode,total_reward,length,success,overloads,lppr_activations,mpc_steps,aborted";
}

inline void write_metrics(const std::string& path, const std::vector<EpisodeMetrics>& rows) {
  auto os = open_out(path);
  os << metrics_header() << '\n';
  for (const auto& m : rows) {
    os << m.episode << ',' << num(m.total_reward) << ',' << m.length << ',' << m.success << ','
       << m.overloads << ',' << m.lppr_activations << ',' << m.mpc_steps << ',' << m.aborted
       << '\n';
  }
}

inline std::vector<EpisodeMetrics> read_metrics(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != metrics_header())
    throw MalformedDataset(path + ": unexpected metrics header");
  std::vector<EpisodeMetrics> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = split(line);
    if (c.size() != 8) throw MalformedDataset(path + ": expected 8 columns");
    EpisodeMetrics m;
    m.episode = static_cast<int>(parse_long(c[0]));
    m.total_reward = parse_double(c[1]);
    m.length = static_cast<int>(parse_long(c[2]));
    m.success = parse_long(c[3]) != 0;
    m.overloads = static_cast<int>(parse_long(c[4]));
    m.lppr_activations = static_cast<int>(parse_long(c[5]));
    m.mpc_steps = static_cast<int>(parse_long(c[6]));
    m.aborted = parse_long(c[7]) != 0;
    rows.push_back(m);
  }
  return rows;
}

// Robustness table ------------------------------------------------------------

struct RobustnessRow {
  double angle_deg = 0.0;
  int trials = 0;
  int successes = 0;
  double success_rate() const { return trials ? static_cast<double>(successes) / trials : 0.0; }
};

inline void write_robustness(const std::string& path, const std::vector<RobustnessRow>& rows) {
  auto os = open_out(path);
  os << "angle_deg,trials,successes,success_rate\n";
  for (const auto& r : rows) {
    os << num(r.angle_deg) << ',' << r.trials << ',' << r.successes << ',' << num(r.success_rate())
       << '\n';
  }
}

}  // namespace pegrl::csv
