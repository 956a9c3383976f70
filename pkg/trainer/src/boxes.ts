/** Box arithmetic on plain numbers. Boxes are [x, y, w, h], normalized. */

export type Box = [number, number, number, number];

export function l1Distance(a: Box, b: Box): number {
  return (
    Math.abs(a[0] - b[0]) +
    Math.abs(a[1] - b[1]) +
    Math.abs(a[2] - b[2]) +
    Math.abs(a[3] - b[3])
  );
}

function interUnion(a: Box, b: Box): [number, number] {
  const ax2 = a[0] + a[2];
  const ay2 = a[1] + a[3];
  const bx2 = b[0] + b[2];
  const by2 = b[1] + b[3];
  const ix = Math.min(ax2, bx2) - Math.max(a[0], b[0]);
  const iy = Math.min(ay2, by2) - Math.max(a[1], b[1]);
  const inter = ix > 0 && iy > 0 ? ix * iy : 0;
  const areaA = (ax2 - a[0]) * (ay2 - a[1]);
  const areaB = (bx2 - b[0]) * (by2 - b[1]);
  return [inter, areaA + areaB - inter];
}

export function iou(a: Box, b: Box): number {
  const [inter, union] = interUnion(a, b);
  return Math.min(1, inter / union);
}

export function giou(a: Box, b: Box): number {
  const [inter, union] = interUnion(a, b);
  const cw = Math.max(a[0] + a[2], b[0] + b[2]) - Math.min(a[0], b[0]);
  const ch = Math.max(a[1] + a[3], b[1] + b[3]) - Math.min(a[1], b[1]);
  const enclosing = cw * ch;
  return Math.min(1, inter / union) - (enclosing - union) / enclosing;
}

export const L1_WEIGHT = 5.0;
export const GIOU_WEIGHT = 2.0;

export function matchCost(pred: Box, gt: Box): number {
  return L1_WEIGHT * l1Distance(pred, gt) + GIOU_WEIGHT * (1 - giou(pred, gt));
}
