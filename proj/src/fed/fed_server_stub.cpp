// Inert stand-in for the federated server: every agent is its own group, no round
// is ever scheduled and aggregation degenerates to local training. Linked into the
// `fedplatoon_nofed` binary to check that runs without federation do not depend on
// the server implementation.

#include "fedplatoon/fed_server.hpp"

namespace fedplatoon {

std::vector<VehicleId> aggregation_group(const Topology&, VehicleId self) { return {self}; }

Eigen::VectorXd average_flat(std::span<const Eigen::VectorXd> vectors) {
  if (vectors.empty()) throw ShapeError("average_flat needs at least one vector");
  return vectors.front();
}

bool should_aggregate(const FrlSchedule&, int, int) { return false; }

FedServer::FedServer(Topology topology) : topology_(topology) {}

void FedServer::open_round(std::vector<VehicleId>) {}
void FedServer::submit(VehicleId, Payload) {}
void FedServer::close_round() {}
std::optional<FedServer::Payload> FedServer::average_for(VehicleId) const { return std::nullopt; }

UpdateRecord apply_aggregation(FedServer&, AggregationKind, Fleet& fleet) {
  UpdateRecord record(fleet.size());
  for (std::size_t p = 0; p < fleet.size(); ++p) {
    for (auto& agent : fleet[p]) {
      record[p].push_back(agent.train_step() ? UpdateKind::kLocalTrain : UpdateKind::kIdle);
    }
  }
  return record;
}

}  // namespace fedplatoon
