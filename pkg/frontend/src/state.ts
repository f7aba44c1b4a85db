/** Single-user session state: append-only history, stale-response discard,
 * at most one in-flight solve and one adaptation. */

import type { FrontEntry, SolveResponse } from "./api";

export interface HistoryEntry {
  lambda: number[];
  objectives: number[];
  timestamp: number;
}

export class SessionState {
  instanceId: number | null = null;
  m = 2;
  current: SolveResponse | null = null;
  currentLambda: number[] | null = null;
  readonly history: ReadonlyArray<HistoryEntry>;
  cachedFront: FrontEntry[] | null = null;
  adaptationRunning = false;

  private historyInner: HistoryEntry[] = [];
  private solveSeq = 0;
  private acceptedSeq = 0;

  constructor() {
    this.history = this.historyInner;
  }

  /** Each solve request takes a ticket; responses carry it back. */
  nextSolveTicket(): number {
    return ++this.solveSeq;
  }

  /** Record a solve response unless a newer request has been issued since. */
  acceptSolve(ticket: number, lambda: number[], response: SolveResponse, now = Date.now()): boolean {
    if (ticket < this.solveSeq || ticket <= this.acceptedSeq) {
      return false; // superseded by a newer preference
    }
    this.acceptedSeq = ticket;
    this.current = response;
    this.currentLambda = [...lambda];
    this.historyInner.push({
      lambda: [...lambda],
      objectives: [...response.objectives],
      timestamp: now,
    });
    return true;
  }

  replaceFront(entries: FrontEntry[]): void {
    this.cachedFront = entries.map((e) => ({
      lambda: [...e.lambda],
      objectives: [...e.objectives],
    }));
  }

  beginAdaptation(): boolean {
    if (this.adaptationRunning) return false;
    this.adaptationRunning = true;
    return true;
  }

  endAdaptation(): void {
    this.adaptationRunning = false;
    this.cachedFront = null; // must be re-swept from the adapted snapshot
  }
}
