/**
 * UI state and its transitions, kept free of DOM concerns so the logic is
 * unit-testable. The edit form holds exact float attributes; selecting a
 * material copies the service's values verbatim, so submitting an untouched
 * form is a true identity edit.
 */

import type { MaterialEntry, ViewInfo } from "./api.js";

export interface PendingEdit {
  k_d: [number, number, number];
  k_m: number;
  k_r: number;
}

export interface UiState {
  views: ViewInfo[];
  currentView: number;
  materials: MaterialEntry[];
  selected: number | null;
  pending: PendingEdit | null;
  envPreset: string;
  intensity: number;
  busy: boolean;
  notice: string | null;
  stamp: number;
}

export function initialState(): UiState {
  return {
    views: [],
    currentView: 0,
    materials: [],
    selected: null,
    pending: null,
    envPreset: "original",
    intensity: 1.0,
    busy: false,
    notice: null,
    stamp: 0,
  };
}

export function selectMaterial(state: UiState, index: number): UiState {
  const mat = state.materials.find((m) => m.index === index);
  if (!mat) return { ...state, notice: `unknown material ${index}` };
  return {
    ...state,
    selected: index,
    pending: { k_d: [...mat.k_d] as [number, number, number], k_m: mat.k_m, k_r: mat.k_r },
    notice: null,
  };
}

/** Selection survives view switches: it names a codeword, not pixels. */
export function switchView(state: UiState, view: number): UiState {
  return { ...state, currentView: view, stamp: state.stamp + 1 };
}

export function clearSelection(state: UiState, notice: string | null = null): UiState {
  return { ...state, selected: null, pending: null, notice };
}

export function updatePending(state: UiState, patch: Partial<PendingEdit>): UiState {
  if (!state.pending) return state;
  return { ...state, pending: { ...state.pending, ...patch } };
}

export function canSubmit(state: UiState): boolean {
  if (state.busy || state.selected === null || !state.pending) return false;
  const vals = [...state.pending.k_d, state.pending.k_m, state.pending.k_r];
  return vals.every((v) => Number.isFinite(v) && v >= 0 && v <= 1);
}

export function bumpStamp(state: UiState): UiState {
  return { ...state, stamp: state.stamp + 1 };
}

export function hexToRgb(hex: string): [number, number, number] {
  const m = /^#?([0-9a-f]{6})$/i.exec(hex);
  if (!m) return [0, 0, 0];
  const v = parseInt(m[1], 16);
  return [((v >> 16) & 255) / 255, ((v >> 8) & 255) / 255, (v & 255) / 255];
}

export function rgbToHex(rgb: [number, number, number]): string {
  const c = rgb.map((x) => Math.max(0, Math.min(255, Math.round(x * 255))));
  return "#" + c.map((x) => x.toString(16).padStart(2, "0")).join("");
}
