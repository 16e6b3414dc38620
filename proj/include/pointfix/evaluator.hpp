// Short / mid / long-term evaluation protocols.
//
// SHORT: every sequence is its own group. MID: sequences sharing an
// environment tag are concatenated in input order. LONG: all sequences form
// one group. Each group starts from the initial parameters; the score of a
// group is the mean over its frames, and the overall score is the unweighted
// mean over groups.
#pragma once

#include <pointfix/metrics.hpp>
#include <pointfix/online_adapter.hpp>

#include <map>
#include <string>
#include <vector>

namespace pointfix {

enum class ProtocolKind { short_term, mid_term, long_term };

inline ProtocolKind protocol_from_name(const std::string& s) {
  if (s == "short" || s == "SHORT") return ProtocolKind::short_term;
  if (s == "mid" || s == "MID") return ProtocolKind::mid_term;
  if (s == "long" || s == "LONG") return ProtocolKind::long_term;
  throw std::invalid_argument("unknown protocol: " + s);
}
inline const char* protocol_name(ProtocolKind k) {
  switch (k) {
    case ProtocolKind::short_term: return "short";
    case ProtocolKind::mid_term: return "mid";
    case ProtocolKind::long_term: return "long";
  }
  return "short";
}

struct ProtocolGroup {
  std::string name;
  std::vector<std::size_t> members;  ///< indices into the input sequences, in order
};

inline std::vector<ProtocolGroup> build_groups(const std::vector<std::string>& ids,
                                               const std::vector<std::string>& environments, ProtocolKind kind) {
  if (ids.size() != environments.size()) throw std::invalid_argument("build_groups: size mismatch");
  std::vector<ProtocolGroup> groups;
  switch (kind) {
    case ProtocolKind::short_term:
      for (std::size_t i = 0; i < ids.size(); ++i) groups.push_back({ids[i], {i}});
      break;
    case ProtocolKind::mid_term: {
      std::map<std::string, std::size_t> at;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        auto [it, fresh] = at.emplace(environments[i], groups.size());
        if (fresh) groups.push_back({environments[i], {}});
        groups[it->second].members.push_back(i);
      }
      break;
    }
    case ProtocolKind::long_term: {
      ProtocolGroup all{"all", {}};
      for (std::size_t i = 0; i < ids.size(); ++i) all.members.push_back(i);
      if (!all.members.empty()) groups.push_back(std::move(all));
      break;
    }
  }
  return groups;
}

template <typename T>
std::vector<ProtocolGroup> build_groups(const std::vector<Sequence<T>>& seqs, ProtocolKind kind) {
  std::vector<std::string> ids, envs;
  for (const auto& s : seqs) {
    ids.push_back(s.id);
    envs.push_back(s.environment);
  }
  return build_groups(ids, envs, kind);
}

struct GroupResult {
  std::string name;
  std::size_t frames = 0;
  double d1_all = 0, epe = 0;
  std::vector<AdaptationReport> sequences;  ///< per member sequence, in order
};

struct ProtocolReport {
  ProtocolKind protocol = ProtocolKind::short_term;
  std::string mode;
  double lr = 0;
  std::vector<GroupResult> groups;
  double avg_d1_all = 0, avg_epe = 0;
};

struct EvalOptions {
  MetricOptions metrics;
  /// false: parameters carry over from one group to the next (as if the
  /// whole input were a single stream).
  bool reset_between_groups = true;
};

template <typename T>
ProtocolReport evaluate_protocol(const ParamSet<T>& theta_init, const std::vector<Sequence<T>>& sequences,
                                 ProtocolKind protocol, const StereoModelConfig& model, const AdaptConfig& adapt,
                                 const EvalOptions& opts = {}) {
  if (sequences.empty()) throw std::invalid_argument("evaluate_protocol: no sequences");
  ProtocolReport rep;
  rep.protocol = protocol;
  rep.mode = adapt_kind_name(adapt.mode.kind);
  rep.lr = adapt.lr;
  OnlineAdapter<T> adapter(theta_init, model, adapt);
  bool first = true;
  for (const auto& g : build_groups(sequences, protocol)) {
    if (g.members.empty()) throw std::invalid_argument("evaluate_protocol: empty group " + g.name);
    // Frames within a group form one stream.
    if (!first && opts.reset_between_groups) adapter.reset();
    first = false;
    GroupResult gr;
    gr.name = g.name;
    for (auto i : g.members) gr.sequences.push_back(adapt_sequence(adapter, sequences[i], adapt, opts.metrics));
    for (const auto& s : gr.sequences)
      for (const auto& r : s.records) {
        gr.d1_all += r.d1_all;
        gr.epe += r.epe;
        ++gr.frames;
      }
    if (gr.frames == 0) throw std::invalid_argument("evaluate_protocol: group without frames " + g.name);
    gr.d1_all /= double(gr.frames);
    gr.epe /= double(gr.frames);
    rep.avg_d1_all += gr.d1_all;
    rep.avg_epe += gr.epe;
    rep.groups.push_back(std::move(gr));
  }
  rep.avg_d1_all /= double(rep.groups.size());
  rep.avg_epe /= double(rep.groups.size());
  return rep;
}

}  // namespace pointfix
