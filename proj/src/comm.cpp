// SPDX-License-Identifier: Apache-2.0

#include "flora/comm.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace flora {

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::FullFineTuning: return "full_ft";
    case Protocol::FedIt: return "fedit";
    case Protocol::Flora: return "flora";
    case Protocol::ZeroPadding: return "zero_padding";
    case Protocol::Standalone: return "standalone";
    case Protocol::Centralized: return "centralized";
  }
  return "?";
}

void CommLedger::bind(Protocol protocol, Dim dim, int clients) {
  if (dim.m < 1 || dim.n < 1) throw std::invalid_argument("CommLedger: dimensions must be positive");
  if (clients < 1) throw std::invalid_argument("CommLedger: need at least one client");
  if (!bound_) {
    protocol_ = protocol;
    dim_ = dim;
    clients_ = clients;
    bound_ = true;
    return;
  }
  if (protocol != protocol_ || !(dim == dim_) || clients != clients_) {
    throw std::invalid_argument("CommLedger: charge disagrees with the ledger's protocol or shape");
  }
}

std::int64_t CommLedger::total() const {
  return std::accumulate(events_.begin(), events_.end(), std::int64_t{0},
                         [](std::int64_t acc, const CommEvent& e) { return acc + e.param_count; });
}

std::int64_t CommLedger::total(int round, Direction direction) const {
  std::int64_t sum = 0;
  for (const auto& e : events_) {
    if (e.round == round && e.direction == direction) sum += e.param_count;
  }
  return sum;
}

void charge_broadcast(CommLedger& ledger, Protocol protocol, Dim dim, int k_clients) {
  ledger.bind(protocol, dim, k_clients);
  if (protocol == Protocol::Centralized) return;
  for (int c = 0; c < k_clients; ++c) {
    ledger.record({0, Direction::Down, c, dim.m * dim.n, PayloadKind::FullModel});
  }
}

void charge_round(CommLedger& ledger, Protocol protocol, Dim dim, std::span<const Index> ranks,
                  int k_clients, int round) {
  if (dim.m < 1 || dim.n < 1) throw std::invalid_argument("charge_round: dimensions must be positive");
  if (k_clients < 1 || ranks.size() != static_cast<std::size_t>(k_clients)) {
    throw std::invalid_argument("charge_round: need one rank per client");
  }
  if (round < 0) throw std::invalid_argument("charge_round: negative round");
  for (auto r : ranks) {
    if (r < 1) throw std::invalid_argument("charge_round: ranks must be >= 1");
  }
  if (round == 0) {
    charge_broadcast(ledger, protocol, dim, k_clients);
  } else {
    ledger.bind(protocol, dim, k_clients);
  }

  const std::int64_t width = dim.m + dim.n;
  const std::int64_t dense = dim.m * dim.n;
  const std::int64_t stacked = std::accumulate(ranks.begin(), ranks.end(), Index{0});
  const std::int64_t widest = *std::max_element(ranks.begin(), ranks.end());

  for (int c = 0; c < k_clients; ++c) {
    const std::int64_t own = ranks[static_cast<std::size_t>(c)];
    switch (protocol) {
      case Protocol::FullFineTuning:
        ledger.record({round, Direction::Up, c, dense, PayloadKind::FullModel});
        ledger.record({round, Direction::Down, c, dense, PayloadKind::FullModel});
        break;
      case Protocol::FedIt:
        // Averaging needs identical ranks; the download is the client's own size.
        ledger.record({round, Direction::Up, c, own * width, PayloadKind::Adapter});
        ledger.record({round, Direction::Down, c, own * width, PayloadKind::Adapter});
        break;
      case Protocol::ZeroPadding:
        ledger.record({round, Direction::Up, c, own * width, PayloadKind::Adapter});
        ledger.record({round, Direction::Down, c, widest * width, PayloadKind::Adapter});
        break;
      case Protocol::Flora:
        ledger.record({round, Direction::Up, c, own * width, PayloadKind::Adapter});
        ledger.record({round, Direction::Down, c, stacked * width, PayloadKind::StackedAdapter});
        break;
      case Protocol::Standalone:
      case Protocol::Centralized:
        break;
    }
  }
}

CommSummary summarize(const CommLedger& ledger, int rounds) {
  if (ledger.empty()) throw std::invalid_argument("summarize: empty ledger");
  if (rounds < 0) throw std::invalid_argument("summarize: negative round count");
  CommSummary s;
  s.protocol = ledger.protocol();
  s.per_round.assign(static_cast<std::size_t>(std::max(rounds, 1)), 0);
  for (const auto& e : ledger.events()) {
    if (e.round >= static_cast<int>(s.per_round.size())) {
      throw std::invalid_argument("summarize: ledger has events past the requested rounds");
    }
    s.per_round[static_cast<std::size_t>(e.round)] += e.param_count;
    s.total_params += e.param_count;
  }
  if (rounds == 0) s.per_round.clear();
  const std::int64_t dense = ledger.dim().m * ledger.dim().n;
  const std::int64_t k = ledger.clients();
  s.full_ft_total = k * dense + static_cast<std::int64_t>(rounds) * 2 * k * dense;
  s.ratio_to_full_ft = static_cast<double>(s.total_params) / static_cast<double>(s.full_ft_total);
  return s;
}

}  // namespace flora
