// CSV export of training logs, adaptation traces and protocol tables, and a
// small CSV reader for the plotting tools.
#pragma once

#include <pointfix/evaluator.hpp>
#include <pointfix/meta_trainer.hpp>

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace pointfix {

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// iter,L_k,point_loss,n_points,seconds
inline std::string train_log_csv(const std::vector<TrainRecord>& log, bool timing = true) {
  std::string out = "iter,L_k,point_loss,n_points,seconds\n";
  for (const auto& r : log)
    out += std::to_string(r.iter) + "," + fmt_num(r.base_loss) + "," + fmt_num(r.point_loss) + "," +
           fmt_num(r.n_points) + "," + fmt_num(timing ? r.seconds : 0.0) + "\n";
  return out;
}

/// frame,d1_all,epe,reproj,modules,ms
inline std::string adaptation_csv(const AdaptationReport& rep) {
  std::string out = "frame,d1_all,epe,reproj,modules,ms\n";
  for (const auto& r : rep.records)
    out += std::to_string(r.frame) + "," + fmt_num(r.d1_all) + "," + fmt_num(r.epe) + "," + fmt_num(r.reproj) +
           "," + r.modules + "," + fmt_num(r.ms) + "\n";
  return out;
}

inline nlohmann::json adaptation_summary(const AdaptationReport& rep) {
  return {{"sequence", rep.sequence}, {"mode", rep.mode},       {"lr", rep.lr},
          {"frames", rep.records.size()}, {"d1_all", rep.mean_d1_all}, {"epe", rep.mean_epe},
          {"reproj", rep.mean_reproj}};
}

/// One row per report (mode); per-group D1-all / EPE columns then the averages.
/// All reports must share the same groups.
inline std::string protocol_table_csv(const std::vector<ProtocolReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("protocol_table_csv: no reports");
  std::string out = "mode";
  for (const auto& g : reports[0].groups) out += "," + g.name + "_d1_all," + g.name + "_epe";
  out += ",avg_d1_all,avg_epe\n";
  for (const auto& r : reports) {
    if (r.groups.size() != reports[0].groups.size())
      throw std::invalid_argument("protocol_table_csv: reports with different groups");
    out += r.mode;
    for (std::size_t i = 0; i < r.groups.size(); ++i) {
      if (r.groups[i].name != reports[0].groups[i].name)
        throw std::invalid_argument("protocol_table_csv: reports with different groups");
      out += "," + fmt_num(r.groups[i].d1_all) + "," + fmt_num(r.groups[i].epe);
    }
    out += "," + fmt_num(r.avg_d1_all) + "," + fmt_num(r.avg_epe) + "\n";
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("csv: no column '" + name + "'");
  }
  bool has_column(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::string& s = rows[r][c];
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != s.size())
        throw std::runtime_error("csv: non-numeric value '" + s + "' in column " + name + ", row " +
                                 std::to_string(r + 1));
      out.push_back(v);
    }
    return out;
  }
};

/// Plain comma-separated text without quoting; every row must have as many
/// fields as the header.
inline CsvTable parse_csv(const std::string& text, const std::string& what = "csv") {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cur;
    for (char c : l) {
      if (c == ',') {
        f.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    f.push_back(cur);
    return f;
  };
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw std::runtime_error(what + ": line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                               " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw std::runtime_error(what + ": empty file");
  return t;
}

}  // namespace pointfix
