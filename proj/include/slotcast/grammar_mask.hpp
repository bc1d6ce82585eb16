#pragma once

#include <span>

#include "slotcast/nanoformer.hpp"
#include "slotcast/synchk.hpp"

namespace synchk {

// Adapts the grammar automaton to the sampler's mask interface for one slot.
class GrammarMask : public nanoformer::TokenMaskProvider {
  public:
    explicit GrammarMask(int expected_slot_digit) : state_(expected_slot_digit) {}

    void allowed_tokens(std::span<char> allowed) override {
        TokenMask mask = state_.allowed_next();
        for (std::size_t i = 0; i < allowed.size() && i < mask.size(); ++i) {
            allowed[i] = mask[i] ? 1 : 0;
        }
    }

    void advance(int token) override { state_.feed(token); }

    const SlotGrammarState& state() const { return state_; }

  private:
    SlotGrammarState state_;
};

}  // namespace synchk
