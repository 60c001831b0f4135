// SPDX-License-Identifier: Apache-2.0
//
// Parameter-count accounting of every transmission in a federated run.
// Counts are parameters, not bytes; multiply by the element width for bytes.
//
// Per client, per round:
//   upload    r_k (m + n)                      every adapter-based protocol
//   download  r (m + n)                        FedIT (averaged adapter)
//             r_max (m + n)                    zero-padding
//             (sum_k r_k)(m + n)               FLoRA (stacked adapter)
//             m n up and m n down              full fine-tuning
// Round 0 additionally charges the one-time m n base broadcast per client,
// for every protocol including full fine-tuning.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "flora/lora.hpp"

namespace flora {

enum class Protocol { FullFineTuning, FedIt, Flora, ZeroPadding, Standalone, Centralized };

const char* to_string(Protocol p);

enum class Direction { Up, Down };
enum class PayloadKind { FullModel, Adapter, StackedAdapter };

struct CommEvent {
  int round = 0;
  Direction direction = Direction::Up;
  int party = 0;  // client id
  std::int64_t param_count = 0;
  PayloadKind payload = PayloadKind::Adapter;

  friend bool operator==(const CommEvent&, const CommEvent&) = default;
};

/// Ledger for one protocol run. The first charge fixes the dimensions and
/// client count; later charges must agree.
class CommLedger {
 public:
  const std::vector<CommEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }
  Protocol protocol() const { return protocol_; }
  Dim dim() const { return dim_; }
  int clients() const { return clients_; }

  void record(const CommEvent& event) { events_.push_back(event); }
  void bind(Protocol protocol, Dim dim, int clients);

  std::int64_t total() const;
  std::int64_t total(int round, Direction direction) const;

 private:
  std::vector<CommEvent> events_;
  Protocol protocol_ = Protocol::Flora;
  Dim dim_;
  int clients_ = 0;
  bool bound_ = false;
};

/// The one-time m n dissemination of the base model to every client.
void charge_broadcast(CommLedger& ledger, Protocol protocol, Dim dim, int k_clients);

/// Appends every transmission of `round` (see header comment).
void charge_round(CommLedger& ledger, Protocol protocol, Dim dim, std::span<const Index> ranks,
                  int k_clients, int round);

struct CommSummary {
  Protocol protocol = Protocol::Flora;
  std::int64_t total_params = 0;
  std::vector<std::int64_t> per_round;  // up + down, round 0 includes the broadcast
  std::int64_t full_ft_total = 0;       // K m n + T * 2 K m n
  double ratio_to_full_ft = 0.0;
};

/// Totals the ledger over rounds 0..rounds-1. With rounds = 0 the ledger may
/// hold only the broadcast, and the full fine-tuning reference is the
/// broadcast alone.
CommSummary summarize(const CommLedger& ledger, int rounds);

}  // namespace flora
