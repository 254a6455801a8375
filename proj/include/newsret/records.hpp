// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "newsret/date.hpp"

namespace newsret {

struct NewsItem {
  std::string stock_id;
  Timestamp timestamp;
  std::string text;
};

/// Forward return is in decimal units over the period following `date`.
struct UniverseEntry {
  Date date;
  std::string stock_id;
  double forward_return = 0.0;
};

}  // namespace newsret
