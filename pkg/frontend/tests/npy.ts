/** Minimal .npy reader for test assertions on raw service responses. */

export interface NpyArray {
  shape: number[];
  data: Float32Array | Int32Array;
}

export function parseNpy(buf: ArrayBuffer): NpyArray {
  const bytes = new Uint8Array(buf);
  const magic = String.fromCharCode(...bytes.slice(1, 6));
  if (bytes[0] !== 0x93 || magic !== "NUMPY") {
    throw new Error("not an npy payload");
  }
  const headerLen = new DataView(buf).getUint16(8, true);
  const header = new TextDecoder().decode(bytes.slice(10, 10 + headerLen));
  const shapeMatch = /'shape':\s*\(([^)]*)\)/.exec(header);
  const descrMatch = /'descr':\s*'([^']+)'/.exec(header);
  if (!shapeMatch || !descrMatch) throw new Error(`bad npy header: ${header}`);
  const shape = shapeMatch[1]
    .split(",")
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number);
  const body = buf.slice(10 + headerLen);
  if (descrMatch[1] === "<f4") return { shape, data: new Float32Array(body) };
  if (descrMatch[1] === "<i4") return { shape, data: new Int32Array(body) };
  throw new Error(`unsupported dtype ${descrMatch[1]}`);
}
