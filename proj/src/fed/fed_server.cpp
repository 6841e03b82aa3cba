#include "fedplatoon/fed_server.hpp"

#include <algorithm>

namespace fedplatoon {
namespace {

std::string describe(VehicleId id) {
  return "(platoon " + std::to_string(id.platoon + 1) + ", vehicle " + std::to_string(id.vehicle + 1) + ")";
}

}  // namespace

std::vector<VehicleId> aggregation_group(const Topology& topology, VehicleId self) {
  if (self.platoon < 0 || self.platoon >= topology.platoons || self.vehicle < 0 || self.vehicle >= topology.vehicles) {
    throw ConfigError("aggregation_group: " + describe(self) + " is outside the topology");
  }
  std::vector<VehicleId> group;
  switch (topology.kind) {
    case TopologyKind::kNone:
      group.push_back(self);
      break;
    case TopologyKind::kInter:
      for (int p = 0; p < topology.platoons; ++p) group.push_back({p, self.vehicle});
      break;
    case TopologyKind::kIntra:
      if (topology.intra_group == IntraGroup::kPredecessorOnly && self.vehicle > 0) {
        group.push_back({self.platoon, self.vehicle - 1});
        group.push_back(self);
      } else if (topology.intra_group == IntraGroup::kPredecessorOnly) {
        group.push_back(self);
      } else {
        for (int v = 0; v <= self.vehicle; ++v) group.push_back({self.platoon, v});
      }
      break;
  }
  return group;
}

Eigen::VectorXd average_flat(std::span<const Eigen::VectorXd> vectors) {
  if (vectors.empty()) throw ShapeError("average_flat needs at least one vector");
  const Eigen::Index n = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != n) throw ShapeError("average_flat: vectors have different lengths");
  }
  if (vectors.size() == 1) return vectors.front();
  // Two-term sums are commutative and doubling is exact, so pairs need no care.
  if (vectors.size() == 2) return (vectors[0] + vectors[1]) / 2.0;
  // Sorted summation makes the result independent of participant order; a column
  // in consensus returns its common value exactly.
  Eigen::VectorXd out(n);
  std::vector<double> column(vectors.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < vectors.size(); ++k) column[k] = vectors[k][i];
    std::sort(column.begin(), column.end());
    if (column.front() == column.back()) {
      out[i] = column.front();
      continue;
    }
    double sum = 0.0;
    for (double x : column) sum += x;
    out[i] = std::clamp(sum / double(column.size()), column.front(), column.back());
  }
  return out;
}

bool should_aggregate(const FrlSchedule& schedule, int episode, int step) {
  if (episode < 0 || step < 0) return false;
  if (episode >= schedule.active_episodes()) return false;
  return (step + 1) % schedule.delay_steps() == 0;
}

FedServer::FedServer(Topology topology) : topology_(topology) { topology_.validate(); }

void FedServer::open_round(std::vector<VehicleId> participants) {
  if (open_ && !sealed_) throw SyncError("previous federated round was never closed");
  participants_ = std::move(participants);
  std::sort(participants_.begin(), participants_.end());
  submissions_.clear();
  open_ = true;
  sealed_ = false;
}

void FedServer::submit(VehicleId id, Payload payload) {
  if (!open_ || sealed_) throw SyncError("submit outside an open federated round");
  if (!std::binary_search(participants_.begin(), participants_.end(), id)) {
    throw SyncError("submit from non-participant " + describe(id));
  }
  if (!submissions_.emplace(id, std::move(payload)).second) throw SyncError("duplicate submission from " + describe(id));
}

void FedServer::close_round() {
  if (!open_ || sealed_) throw SyncError("close_round without an open round");
  for (const auto& id : participants_) {
    if (!submissions_.contains(id)) throw SyncError("participant " + describe(id) + " missing at the barrier");
  }
  sealed_ = true;
  ++rounds_completed_;
}

std::optional<FedServer::Payload> FedServer::average_for(VehicleId id) const {
  if (!sealed_) throw SyncError("average_for before the round is sealed");
  std::vector<const Payload*> members;
  for (const auto& member : aggregation_group(topology_, id)) {
    auto it = submissions_.find(member);
    if (it == submissions_.end()) throw SyncError("group member " + describe(member) + " did not take part in the round");
    if (!it->second.empty()) members.push_back(&it->second);
  }
  if (members.empty()) return std::nullopt;
  const std::size_t parts = members.front()->size();
  Payload out(parts);
  std::vector<Eigen::VectorXd> slice(members.size());
  for (std::size_t r = 0; r < parts; ++r) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      if ((*members[k]).size() != parts) throw ShapeError("payloads in one group have different part counts");
      slice[k] = (*members[k])[r];
    }
    out[r] = average_flat(slice);
  }
  return out;
}

UpdateRecord apply_aggregation(FedServer& server, AggregationKind kind, Fleet& fleet) {
  const Topology& topology = server.topology();
  if (int(fleet.size()) != topology.platoons) throw SyncError("fleet does not match the server topology");
  UpdateRecord record(fleet.size());
  std::vector<VehicleId> everyone;
  for (int p = 0; p < int(fleet.size()); ++p) {
    if (int(fleet[p].size()) != topology.vehicles) throw SyncError("fleet does not match the server topology");
    record[p].assign(fleet[p].size(), UpdateKind::kIdle);
    for (int v = 0; v < int(fleet[p].size()); ++v) everyone.push_back({p, v});
  }
  auto solo = [&](VehicleId id) { return aggregation_group(topology, id).size() == 1; };

  server.open_round(everyone);
  if (kind == AggregationKind::kWeights) {
    for (const auto& id : everyone) {
      if (solo(id)) {
        record[id.platoon][id.vehicle] =
            fleet[id.platoon][id.vehicle].train_step() ? UpdateKind::kLocalTrain : UpdateKind::kIdle;
      }
    }
    for (const auto& id : everyone) {
      const FlatWeights w = fleet[id.platoon][id.vehicle].flat_weights();
      server.submit(id, FedServer::Payload(w.begin(), w.end()));
    }
    server.close_round();
    for (const auto& id : everyone) {
      if (solo(id)) continue;
      const auto mean = server.average_for(id);
      FlatWeights w;
      std::copy(mean->begin(), mean->end(), w.begin());
      fleet[id.platoon][id.vehicle].assign_weights(w);
      record[id.platoon][id.vehicle] = UpdateKind::kAggregated;
    }
    return record;
  }

  std::map<VehicleId, AgentGradients> own;
  for (const auto& id : everyone) {
    auto grads = fleet[id.platoon][id.vehicle].compute_gradients();
    FedServer::Payload payload;
    if (grads) {
      payload = {nn::flatten(grads->actor), nn::flatten(grads->critic)};
      own.emplace(id, std::move(*grads));
    }
    server.submit(id, std::move(payload));
  }
  server.close_round();
  for (const auto& id : everyone) {
    DdpgAgent& agent = fleet[id.platoon][id.vehicle];
    if (solo(id)) {
      auto it = own.find(id);
      if (it != own.end()) {
        agent.apply_gradients(it->second);
        record[id.platoon][id.vehicle] = UpdateKind::kLocalTrain;
      }
      continue;
    }
    const auto mean = server.average_for(id);
    if (!mean) continue;
    AgentGradients avg{nn::zero_gradients(agent.actor()), nn::zero_gradients(agent.critic())};
    nn::assign_flat(avg.actor, (*mean)[0]);
    nn::assign_flat(avg.critic, (*mean)[1]);
    agent.apply_gradients(avg);
    record[id.platoon][id.vehicle] = UpdateKind::kAggregated;
  }
  return record;
}

}  // namespace fedplatoon
