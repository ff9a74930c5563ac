#pragma once

#include <cmath>
#include <cstddef>
#include <exception>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include "cmpamp/cmpamp.hpp"
#include "cmpamp/runtime/protocol.hpp"
#include "cmpamp/runtime/transport.hpp"

namespace cmpamp::runtime {

enum class TransportKind { in_process, tcp };

inline std::string_view to_string(TransportKind kind) { return kind == TransportKind::tcp ? "tcp" : "in_process"; }

inline TransportKind transport_kind_from_string(std::string_view name) {
  if (name == "tcp") return TransportKind::tcp;
  if (name == "in_process") return TransportKind::in_process;
  throw std::invalid_argument("unknown transport: " + std::string(name));
}

/// Worker `processor` (0-based) drops its link at the start of `round`
/// instead of sending its contribution.
struct FaultInjection {
  std::size_t processor = 0;
  std::size_t round = 1;
};

struct TransportConfig {
  TransportKind kind = TransportKind::tcp;
  Millis timeout{60000};
  std::optional<FaultInjection> fault;
};

/// Center-side failure; `processor` is 0-based, `round` is the outer index s.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(std::size_t processor, std::size_t round, const std::string& why)
      : std::runtime_error("worker " + std::to_string(processor + 1) + " failed in round " + std::to_string(round) +
                           ": " + why),
        processor_(processor),
        round_(round) {}
  std::size_t processor() const noexcept { return processor_; }
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t processor_;
  std::size_t round_;
};

/// What a worker sends home after its last round.
struct WorkerReport {
  std::vector<CmpRecord> records;
  std::optional<Divergence> divergence;
};

namespace detail {

inline double reason_code(const std::string& reason) {
  if (reason == "non-finite iterate") return 1;
  if (reason == "tau_hat grew beyond divergence bound") return 2;
  return 3;
}

inline std::string reason_text(double code) {
  if (code == 1) return "non-finite iterate";
  if (code == 2) return "tau_hat grew beyond divergence bound";
  return "worker reported divergence";
}

inline std::uint16_t wire_id(std::size_t p) { return static_cast<std::uint16_t>(p + 1); }

}  // namespace detail

/// Report payload: [diverged, s, k, p, reason, loss count, record count,
/// then per record s, k, p, mse, tau_hat, tau_se, losses...]. Indices are
/// small integers, exact in a double.
inline std::vector<double> encode_report(const WorkerReport& report, std::size_t loss_count) {
  std::vector<double> out;
  const auto& d = report.divergence;
  out.push_back(d ? 1.0 : 0.0);
  out.push_back(d ? static_cast<double>(d->s) : 0.0);
  out.push_back(d ? static_cast<double>(d->k) : 0.0);
  out.push_back(d ? static_cast<double>(d->p) : 0.0);
  out.push_back(d ? detail::reason_code(d->reason) : 0.0);
  out.push_back(static_cast<double>(loss_count));
  out.push_back(static_cast<double>(report.records.size()));
  for (const auto& r : report.records) {
    if (r.losses.size() != loss_count) throw std::invalid_argument("record loss count mismatch");
    out.insert(out.end(), {static_cast<double>(r.s), static_cast<double>(r.k), static_cast<double>(r.p), r.mse,
                           r.tau_hat, r.tau_se});
    out.insert(out.end(), r.losses.begin(), r.losses.end());
  }
  return out;
}

inline WorkerReport decode_report(const std::vector<double>& payload) {
  auto bad = [] { return std::invalid_argument("malformed worker report"); };
  if (payload.size() < 7) throw bad();
  WorkerReport report;
  if (payload[0] != 0.0)
    report.divergence = Divergence{static_cast<std::size_t>(payload[1]), static_cast<std::size_t>(payload[2]),
                                   static_cast<std::size_t>(payload[3]), detail::reason_text(payload[4])};
  const auto losses = static_cast<std::size_t>(payload[5]);
  const auto count = static_cast<std::size_t>(payload[6]);
  const std::size_t width = 6 + losses;
  if (payload.size() != 7 + count * width) throw bad();
  for (std::size_t i = 0; i < count; ++i) {
    const double* row = payload.data() + 7 + i * width;
    CmpRecord r;
    r.s = static_cast<std::size_t>(row[0]);
    r.k = static_cast<std::size_t>(row[1]);
    r.p = static_cast<std::size_t>(row[2]);
    r.mse = row[3];
    r.tau_hat = row[4];
    r.tau_se = row[5];
    r.losses.assign(row + 6, row + width);
    report.records.push_back(std::move(r));
  }
  return report;
}

/// Worker loop: per round send r_p, wait for g^s, run the inner iterations.
/// After the last round send the report and wait for shutdown.
inline void run_worker(ProcessorNode& node, Channel& link, const Schedule& schedule, std::size_t loss_count,
                       Millis timeout, std::optional<std::size_t> fail_round = std::nullopt) {
  const auto id = detail::wire_id(node.id());
  const auto n = static_cast<std::size_t>(node.contribution().size());
  for (std::size_t s = 1; s <= schedule.s_hat(); ++s) {
    if (fail_round && *fail_round == s) {
      link.close();
      return;
    }
    const Vector& r = node.contribution();
    link.send({MessageKind::contribution, static_cast<std::uint32_t>(s), id, std::vector<double>(r.begin(), r.end())});
    FusionMessage msg = link.receive(timeout);
    if (msg.kind == MessageKind::shutdown) return;
    if (msg.kind != MessageKind::aggregate || msg.round != s || msg.payload.size() != n)
      throw std::runtime_error("worker " + std::to_string(id) + ": unexpected " + std::string(to_string(msg.kind)) +
                               " message in round " + std::to_string(s));
    const Eigen::Map<const Vector> g(msg.payload.data(), static_cast<Eigen::Index>(n));
    node.run_round(s, g);
  }
  link.send({MessageKind::report, static_cast<std::uint32_t>(schedule.s_hat()), id,
             encode_report({node.records(), node.divergence()}, loss_count)});
  link.receive(timeout);
}

/// Fusion center. Never sees A_p: it only sums contributions (ascending
/// processor order, as in the sequential engine) and broadcasts g^s.
inline std::vector<WorkerReport> run_center(std::vector<std::unique_ptr<Channel>>& links, std::size_t n,
                                            const Schedule& schedule, Millis timeout) {
  const std::size_t P = links.size();
  auto fail = [&](std::size_t p, std::size_t s, const std::string& why) {
    for (auto& l : links) l->close();
    return RunAborted(p, s, why);
  };
  auto receive = [&](std::size_t p, std::size_t s, MessageKind kind) {
    FusionMessage msg;
    try {
      msg = links[p]->receive(timeout);
    } catch (const std::exception& e) {
      throw fail(p, s, e.what());
    }
    if (msg.kind != kind || msg.round != s || msg.processor != detail::wire_id(p))
      throw fail(p, s, "unexpected " + std::string(to_string(msg.kind)) + " message");
    return msg;
  };
  auto send = [&](std::size_t p, std::size_t s, const FusionMessage& msg) {
    try {
      links[p]->send(msg);
    } catch (const std::exception& e) {
      throw fail(p, s, e.what());
    }
  };
  std::vector<Vector> contributions(P);
  for (std::size_t s = 1; s <= schedule.s_hat(); ++s) {
    for (std::size_t p = 0; p < P; ++p) {
      auto msg = receive(p, s, MessageKind::contribution);
      if (msg.payload.size() != n) throw fail(p, s, "contribution has the wrong length");
      contributions[p] = Eigen::Map<const Vector>(msg.payload.data(), static_cast<Eigen::Index>(n));
    }
    const Vector g = fusion_aggregate(contributions);
    FusionMessage agg{MessageKind::aggregate, static_cast<std::uint32_t>(s), 0, std::vector<double>(g.begin(), g.end())};
    for (std::size_t p = 0; p < P; ++p) send(p, s, agg);
  }
  std::vector<WorkerReport> reports;
  for (std::size_t p = 0; p < P; ++p) {
    auto msg = receive(p, schedule.s_hat(), MessageKind::report);
    try {
      reports.push_back(decode_report(msg.payload));
    } catch (const std::exception& e) {
      throw fail(p, schedule.s_hat(), e.what());
    }
  }
  for (std::size_t p = 0; p < P; ++p)
    send(p, schedule.s_hat(), {MessageKind::shutdown, static_cast<std::uint32_t>(schedule.s_hat()), 0, {}});
  return reports;
}

inline void assemble_result(CmpResult& result, const std::vector<WorkerReport>& reports) {
  std::vector<std::vector<CmpRecord>> records;
  std::vector<std::optional<Divergence>> divergences;
  for (const auto& r : reports) {
    records.push_back(r.records);
    divergences.push_back(r.divergence);
  }
  merge_trajectories(result, records, divergences);
}

/// Message-passing run with one local worker thread per processor talking to
/// the center over `transport` (in-process frames or loopback TCP). The
/// trajectory is bit-identical to the sequential engine.
inline CmpResult run_distributed(const ProblemInstance& inst, const Schedule& schedule,
                                 const DenoiserSchedule& denoiser, const CmpOptions& options,
                                 const TransportConfig& transport) {
  validate_cmp_inputs(inst, schedule, denoiser, options);
  CmpResult result;
  for (const auto& loss : options.losses) result.loss_names.push_back(loss.name);
  auto se_traj = std::make_shared<const se::SeTrajectory>(
      se::run_se_cmp(se_params_for(inst, denoiser, options.engine), schedule));
  auto nodes = make_nodes(inst, schedule, denoiser, options, se_traj);
  const std::size_t P = nodes.size();

  std::vector<std::unique_ptr<Channel>> center_links(P), worker_links(P);
  std::vector<std::unique_ptr<TcpListener>> listeners(P);
  if (transport.kind == TransportKind::in_process) {
    for (std::size_t p = 0; p < P; ++p) std::tie(center_links[p], worker_links[p]) = make_in_process_pair();
  } else {
    for (std::size_t p = 0; p < P; ++p) listeners[p] = std::make_unique<TcpListener>(Endpoint{"127.0.0.1", 0});
  }

  std::vector<std::exception_ptr> worker_errors(P);
  std::vector<WorkerReport> reports;
  std::exception_ptr center_error;
  {
    std::vector<std::jthread> workers;
    for (std::size_t p = 0; p < P; ++p) {
      workers.emplace_back([&, p] {
        try {
          if (listeners[p]) worker_links[p] = listeners[p]->accept(transport.timeout);
          std::optional<std::size_t> fail_round;
          if (transport.fault && transport.fault->processor == p) fail_round = transport.fault->round;
          run_worker(nodes[p], *worker_links[p], schedule, options.losses.size(), transport.timeout, fail_round);
        } catch (...) {
          worker_errors[p] = std::current_exception();
        }
      });
    }
    try {
      if (transport.kind == TransportKind::tcp)
        for (std::size_t p = 0; p < P; ++p)
          center_links[p] = connect_tcp(Endpoint{"127.0.0.1", listeners[p]->port()}, transport.timeout);
      reports = run_center(center_links, static_cast<std::size_t>(inst.rows()), schedule, transport.timeout);
    } catch (...) {
      center_error = std::current_exception();
      for (auto& l : center_links)
        if (l) l->close();
    }
  }
  if (center_error) std::rethrow_exception(center_error);
  for (auto& e : worker_errors)
    if (e) std::rethrow_exception(e);

  assemble_result(result, reports);
  for (const auto& node : nodes) result.processors.push_back(node.state());
  result.se = *se_traj;
  return result;
}

/// Center for workers running in other processes (`cmpamp worker`). Only the
/// SE inputs are needed here: no matrix, no signal.
inline CmpResult run_remote_center(const se::SeParams& params, const Schedule& schedule,
                                   const std::vector<std::string>& loss_names, const std::vector<Endpoint>& workers,
                                   Millis timeout) {
  schedule.validate();
  if (workers.size() != params.sizes.size())
    throw std::invalid_argument("need one worker endpoint per processor (" + std::to_string(params.sizes.size()) +
                                "), got " + std::to_string(workers.size()));
  CmpResult result;
  result.loss_names = loss_names;
  result.se = se::run_se_cmp(params, schedule);
  std::vector<std::unique_ptr<Channel>> links;
  for (std::size_t p = 0; p < workers.size(); ++p) {
    try {
      links.push_back(connect_tcp(workers[p], timeout));
    } catch (const std::exception& e) {
      for (auto& l : links) l->close();
      throw RunAborted(p, 1, e.what());
    }
  }
  assemble_result(result, run_center(links, params.n, schedule, timeout));
  return result;
}

/// One worker process: owns processor p's block of the instance, listens on
/// `listen` and serves a single run.
inline void run_remote_worker(const ProblemInstance& inst, std::size_t p, const Schedule& schedule,
                              const DenoiserSchedule& denoiser, const CmpOptions& options, const Endpoint& listen,
                              Millis timeout) {
  validate_cmp_inputs(inst, schedule, denoiser, options);
  if (p >= inst.processors()) throw std::invalid_argument("processor index out of range");
  auto se_traj = std::make_shared<const se::SeTrajectory>(
      se::run_se_cmp(se_params_for(inst, denoiser, options.engine), schedule));
  ProcessorNode node(p, inst.block(p), inst.y, inst.signal_block(p), schedule, denoiser, options, se_traj);
  TcpListener listener(listen);
  auto link = listener.accept(timeout);
  run_worker(node, *link, schedule, options.losses.size(), timeout);
}

}  // namespace cmpamp::runtime
