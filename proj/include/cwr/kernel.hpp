#pragma once

#include "cwr/types.hpp"

namespace cwr {

enum class WinValue { WinFirst, WinSecond, Tie };
enum class DecisionStage { Terminal, NonTerminal, Undecided };

struct WinVerdict {
  WinValue value = WinValue::Tie;
  DecisionStage decided_at = DecisionStage::Undecided;

  bool operator==(const WinVerdict&) const = default;
};

// Prioritized pairwise comparison of two composite outcomes. Terminal events
// are compared first: a subject wins when the opponent's terminal event was
// observed strictly inside the subject's own observation window. If neither
// terminal rule decides, the non-terminal events are compared by the same
// logic; otherwise the pair is a tie. Exactly tied times are non-decisive and
// fall through to the next stage.
inline WinVerdict compare(const CompositeOutcome& a, const CompositeOutcome& b) {
  if (b.delta_terminal == 1 && b.u_terminal < a.u_terminal) {
    return {WinValue::WinFirst, DecisionStage::Terminal};
  }
  if (a.delta_terminal == 1 && a.u_terminal < b.u_terminal) {
    return {WinValue::WinSecond, DecisionStage::Terminal};
  }
  if (b.delta_nonterminal == 1 && b.u_nonterminal < a.u_nonterminal) {
    return {WinValue::WinFirst, DecisionStage::NonTerminal};
  }
  if (a.delta_nonterminal == 1 && a.u_nonterminal < b.u_nonterminal) {
    return {WinValue::WinSecond, DecisionStage::NonTerminal};
  }
  return {WinValue::Tie, DecisionStage::Undecided};
}

// Kernel indicators: phi1(a,b) = 1 iff the first outcome wins, phi2(a,b) = 1
// iff the second wins. phi1(a,b) + phi2(a,b) <= 1 on every pair.
inline int phi1(const CompositeOutcome& a, const CompositeOutcome& b) {
  return compare(a, b).value == WinValue::WinFirst ? 1 : 0;
}

inline int phi2(const CompositeOutcome& a, const CompositeOutcome& b) {
  return compare(a, b).value == WinValue::WinSecond ? 1 : 0;
}

}  // namespace cwr
