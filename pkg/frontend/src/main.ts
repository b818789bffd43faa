import { ApiClient } from "./api.js";
import { EditorState } from "./editor.js";
import { AbPlayback } from "./playback.js";
import { drawEditor } from "./render.js";
import { PointerSample, strokeToConstraint } from "./strokes.js";
import { ViewTransform } from "./view.js";

const api = new ApiClient("");

let editor: EditorState | null = null;
let view: ViewTransform | null = null;
let ab: AbPlayback | null = null;
let mode: "draw" | "lock" = "draw";
let trail: PointerSample[] = [];
let lockAnchor: number | null = null;

const canvas = document.getElementById("contour") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const status = document.getElementById("status")!;

function say(message: string): void {
  status.textContent = message;
}

function redraw(): void {
  if (!editor || !view) return;
  drawEditor(ctx, view, editor.analysis.frames, editor.working, editor.strokes, editor.locks);
}

function pointerPos(event: PointerEvent): PointerSample {
  const rect = canvas.getBoundingClientRect();
  return { x: event.clientX - rect.left, y: event.clientY - rect.top };
}

canvas.addEventListener("pointerdown", (event) => {
  if (!editor || !view) return;
  canvas.setPointerCapture(event.pointerId);
  if (mode === "draw") {
    trail = [pointerPos(event)];
  } else {
    lockAnchor = view.xToFrame(pointerPos(event).x);
  }
});

canvas.addEventListener("pointermove", (event) => {
  if (!editor || !view || !canvas.hasPointerCapture(event.pointerId)) return;
  if (mode === "draw") {
    trail.push(pointerPos(event));
    redraw();
    ctx.strokeStyle = "#ffb454";
    ctx.beginPath();
    trail.forEach((s, i) => (i ? ctx.lineTo(s.x, s.y) : ctx.moveTo(s.x, s.y)));
    ctx.stroke();
  }
});

canvas.addEventListener("pointerup", (event) => {
  if (!editor || !view) return;
  canvas.releasePointerCapture(event.pointerId);
  if (mode === "draw" && trail.length) {
    const result = strokeToConstraint(trail, view, editor.analysis.frames.voiced);
    if (result.notice) say(result.notice);
    editor.addStrokeSegments(result.segments);
    trail = [];
  } else if (mode === "lock" && lockAnchor !== null) {
    const end = view.xToFrame(pointerPos(event).x);
    editor.addLock(lockAnchor, end + 1);
    lockAnchor = null;
  }
  redraw();
});

function wireButton(id: string, handler: () => void | Promise<void>): void {
  document.getElementById(id)!.addEventListener("click", () => {
    Promise.resolve(handler()).catch((err) => say(String(err)));
  });
}

wireButton("mode-draw", () => {
  mode = "draw";
  say("draw mode: drag to sketch pitch");
});
wireButton("mode-lock", () => {
  mode = "lock";
  say("lock mode: drag over regions to keep");
});
wireButton("clear-strokes", () => {
  editor?.clearStrokes();
  redraw();
});
wireButton("clear-locks", () => {
  editor?.clearLocks();
  redraw();
});

wireButton("regenerate", async () => {
  if (!editor) return;
  say("generating...");
  const contour = await editor.regenerate();
  if (contour === null) return; // superseded
  say(`rendition ${editor.history.length} received`);
  redraw();
});

wireButton("synthesize", async () => {
  if (!editor) return;
  say("synthesizing...");
  const rid = await editor.synthesizeActive();
  say(`audio ready: ${rid}`);
});

wireButton("ab-setup", async () => {
  if (!editor) return;
  const withAudio = editor.history.filter((h) => h.audioRenditionId);
  if (withAudio.length < 1) {
    say("synthesize at least one rendition first");
    return;
  }
  const last = withAudio[withAudio.length - 1];
  const pair = withAudio.length > 1 ? withAudio[withAudio.length - 2] : null;
  const urlOf = (rid: string, lowpass: boolean) =>
    api.audioUrl(editor!.projectId, rid, lowpass);
  const aId = pair ? pair.audioRenditionId! : "original";
  const bId = last.audioRenditionId!;
  ab = new AbPlayback(
    document.getElementById("player-a") as HTMLAudioElement,
    document.getElementById("player-b") as HTMLAudioElement,
    { url: urlOf(aId, false), lowpassUrl: urlOf(aId, true) },
    { url: urlOf(bId, false), lowpassUrl: urlOf(bId, true) },
  );
  await ab.play();
  say(`A/B ready: ${aId} vs ${bId}`);
});

wireButton("ab-toggle", async () => {
  if (!ab) return;
  await ab.toggle();
  say(`listening to ${ab.active === 0 ? "A" : "B"} at ${ab.playhead.toFixed(2)}s`);
});

document.getElementById("lowpass")!.addEventListener("change", (event) => {
  const enabled = (event.target as HTMLInputElement).checked;
  ab?.setLowpass(enabled).catch((err) => say(String(err)));
});

document.getElementById("upload")!.addEventListener("submit", async (event) => {
  event.preventDefault();
  const form = new FormData(event.target as HTMLFormElement);
  try {
    say("uploading...");
    const projectId = await api.createProject(form);
    const analysis = await api.getAnalysis(projectId);
    editor = new EditorState(api, projectId, analysis);
    view = new ViewTransform(canvas.width, canvas.height, analysis.frame_count, analysis.grid);
    say(`project ${projectId}: ${analysis.frame_count} frames`);
    redraw();
  } catch (err) {
    say(String(err));
  }
});
